//! Minimal line-chart SVG writer and CSV sidecar.

use std::fmt::Write as _;
use std::path::Path;

use super::Spectrum;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Tick step of 1, 2 or 5 times a power of ten, about `target` ticks.
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let f = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    f * mag
}

/// Padded data range and tick positions.
fn axis(lo: f64, hi: f64) -> (f64, f64, Vec<f64>, usize) {
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    };
    let step = nice_step(hi - lo, 5.0);
    let first = (lo / step).ceil();
    let mut ticks = Vec::new();
    let mut k = first;
    while k * step <= hi + step * 1e-9 {
        ticks.push(k * step);
        k += 1.0;
    }
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    (lo, hi, ticks, decimals)
}

fn fmt_tick(v: f64, decimals: usize) -> String {
    // + 0.0 folds -0 into 0
    format!("{:.*}", decimals, v + 0.0)
}

/// Render one polyline per spectrum, sharing the first spectrum's axis
/// semantics.
pub fn render_svg(spectra: &[Spectrum], title: &str) -> String {
    let xs = spectra.iter().flat_map(|s| s.x_axis.iter().copied());
    let ys = spectra.iter().flat_map(|s| s.values.iter().copied());
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let (y_lo, y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let (x_lo, x_hi) = if x_lo.is_finite() {
        (x_lo, x_hi)
    } else {
        (0.0, 1.0)
    };
    let (y_lo, y_hi) = if y_lo.is_finite() {
        (y_lo, y_hi)
    } else {
        (0.0, 1.0)
    };
    let (x0, x1, xt, xd) = axis(x_lo, x_hi);
    let (y0, y1, yt, yd) = axis(y_lo, y_hi);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
    let x_label = if spectra.first().is_some_and(|s| s.x_is_wavelength) {
        "Wavelength (nm)"
    } else {
        "Band index"
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(s, r##"<g stroke="#dddddd" stroke-width="1">"##);
    for &t in &xt {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#,
            px(t),
            TOP,
            TOP + ph
        );
    }
    for &t in &yt {
        let _ = writeln!(
            s,
            r#"<line x1="{1:.2}" y1="{0:.2}" x2="{2:.2}" y2="{0:.2}"/>"#,
            py(t),
            LEFT,
            LEFT + pw
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>"##
    );
    for &t in &xt {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(t),
            TOP + ph + 16.0,
            fmt_tick(t, xd)
        );
    }
    for &t in &yt {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py(t) + 4.0,
            fmt_tick(t, yd)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_label}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">Reflectance</text>"#,
        TOP + ph / 2.0
    );
    for (k, sp) in spectra.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = sp
            .x_axis
            .iter()
            .zip(&sp.values)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 10.0 + k as f64 * 18.0;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&sp.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `x,<label>...` then one row per x value. Numbers use the shortest
/// text that parses back to the same f64. Shorter series leave cells empty.
pub fn write_csv(spectra: &[Spectrum], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string()];
    header.extend(spectra.iter().map(|s| s.label.clone()));
    w.write_record(&header)?;
    let axis = spectra
        .iter()
        .max_by_key(|s| s.x_axis.len())
        .map(|s| s.x_axis.as_slice())
        .unwrap_or(&[]);
    for (i, x) in axis.iter().enumerate() {
        let mut row = vec![x.to_string()];
        row.extend(
            spectra
                .iter()
                .map(|s| s.values.get(i).map(f64::to_string).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
