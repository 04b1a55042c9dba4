//! Slow, obviously-correct reference implementations used by the
//! integration and acceptance tests.
#![allow(dead_code)]

use leafhsi::augmentation::DrawRecord;
use leafhsi::segmentation::{BBox, Connectivity, Mask};
use leafhsi::Hypercube;
use num_bigint::BigInt;
use num_rational::BigRational;

/// Band means over groups of `k`, straight from `get`.
pub fn naive_spectral_bin(cube: &Hypercube, k: usize) -> Vec<Vec<Vec<f64>>> {
    let (l, s, b) = cube.dims();
    let mut out = vec![vec![vec![0.0; b / k]; s]; l];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, px) in row.iter_mut().enumerate() {
            for (g, v) in px.iter_mut().enumerate() {
                let mut sum = 0.0;
                for d in 0..k {
                    sum += cube.get(i, j, g * k + d);
                }
                *v = sum / k as f64;
            }
        }
    }
    out
}

/// Block means over `k x k` windows.
pub fn naive_spatial_bin(cube: &Hypercube, k: usize) -> Vec<Vec<Vec<f64>>> {
    let (l, s, b) = cube.dims();
    let mut out = vec![vec![vec![0.0; b]; s / k]; l / k];
    for (bi, row) in out.iter_mut().enumerate() {
        for (bj, px) in row.iter_mut().enumerate() {
            for (band, v) in px.iter_mut().enumerate() {
                let mut sum = 0.0;
                for di in 0..k {
                    for dj in 0..k {
                        sum += cube.get(bi * k + di, bj * k + dj, band);
                    }
                }
                *v = sum / (k * k) as f64;
            }
        }
    }
    out
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

/// Exhaustive between-class variance argmax in exact rationals.
/// Class values are bin indices; ties keep the lowest boundary.
///
/// `p0 p1 (mu0 - mu1)^2` is expanded to `(S0 w1 - S1 w0)^2 / (N^2 w0 w1)`
/// so each candidate costs a single rational.
pub fn otsu_exhaustive(counts: &[u64]) -> Option<usize> {
    let n: u64 = counts.iter().sum();
    let mut best: Option<(usize, BigRational)> = None;
    for j in 1..counts.len() {
        let w0: u64 = counts[..j].iter().sum();
        let w1 = n - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let s0: u64 = counts[..j]
            .iter()
            .enumerate()
            .map(|(i, &c)| i as u64 * c)
            .sum();
        let s1: u64 = counts[j..]
            .iter()
            .enumerate()
            .map(|(i, &c)| (i + j) as u64 * c)
            .sum();
        let d = BigInt::from(s0) * BigInt::from(w1) - BigInt::from(s1) * BigInt::from(w0);
        let den = BigInt::from(n) * BigInt::from(n) * BigInt::from(w0) * BigInt::from(w1);
        let var = BigRational::new(d.clone() * d, den);
        if best.as_ref().is_none_or(|(_, b)| var > *b) {
            best = Some((j, var));
        }
    }
    best.filter(|(_, v)| *v > BigRational::from_integer(BigInt::from(0)))
        .map(|(j, _)| j)
}

/// Components by breadth-first flood fill: (area, bbox) in the row-major
/// order of each component's first pixel.
pub fn flood_fill(mask: &Mask, conn: Connectivity) -> Vec<(usize, BBox)> {
    let (h, w) = (mask.lines, mask.samples);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let steps: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    };
    for start in 0..h * w {
        if seen[start] || !mask.bits[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        let mut area = 0;
        let mut bb = BBox {
            min_row: usize::MAX,
            min_col: usize::MAX,
            max_row: 0,
            max_col: 0,
        };
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            area += 1;
            bb.min_row = bb.min_row.min(r);
            bb.min_col = bb.min_col.min(c);
            bb.max_row = bb.max_row.max(r);
            bb.max_col = bb.max_col.max(c);
            for &(dr, dc) in steps {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let q = nr as usize * w + nc as usize;
                if mask.bits[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        out.push((area, bb));
    }
    out
}

type M2 = [[f64; 2]; 2];

fn mul(a: M2, b: M2) -> M2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Source (row, col) of output pixel (row, col): build the forward
/// shear * rotate * flip matrix in (x, y) and invert it numerically.
pub fn reference_source(
    draw: &DrawRecord,
    lines: usize,
    samples: usize,
    row: usize,
    col: usize,
) -> (f64, f64) {
    let th = draw.rotate_deg.to_radians();
    let flip = [
        [if draw.flip_horizontal { -1.0 } else { 1.0 }, 0.0],
        [0.0, if draw.flip_vertical { -1.0 } else { 1.0 }],
    ];
    let rot = [[th.cos(), -th.sin()], [th.sin(), th.cos()]];
    let shear = [[1.0, draw.shear_deg.to_radians().tan()], [0.0, 1.0]];
    let f = mul(shear, mul(rot, flip));
    let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    let inv = [
        [f[1][1] / det, -f[0][1] / det],
        [-f[1][0] / det, f[0][0] / det],
    ];
    let cx = (samples as f64 - 1.0) / 2.0;
    let cy = (lines as f64 - 1.0) / 2.0;
    let (x, y) = (col as f64 - cx, row as f64 - cy);
    let sx = inv[0][0] * x + inv[0][1] * y + cx;
    let sy = inv[1][0] * x + inv[1][1] * y + cy;
    (sy, sx)
}

/// Bilinear taps for a source point, or `None` outside the image.
pub fn reference_bilinear_taps(
    sr: f64,
    sc: f64,
    lines: usize,
    samples: usize,
) -> Option<Vec<(usize, usize, f64)>> {
    let tol = 1e-9;
    if sr < -tol || sc < -tol || sr > (lines - 1) as f64 + tol || sc > (samples - 1) as f64 + tol {
        return None;
    }
    let sr = sr.max(0.0).min((lines - 1) as f64);
    let sc = sc.max(0.0).min((samples - 1) as f64);
    let r0 = sr.floor() as usize;
    let c0 = sc.floor() as usize;
    let r1 = (r0 + 1).min(lines - 1);
    let c1 = (c0 + 1).min(samples - 1);
    let fr = sr - r0 as f64;
    let fc = sc - c0 as f64;
    let taps = vec![
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c1, (1.0 - fr) * fc),
        (r1, c0, fr * (1.0 - fc)),
        (r1, c1, fr * fc),
    ];
    Some(taps.into_iter().filter(|t| t.2 > 0.0).collect())
}

/// Per-band bilinear resampling, one band at a time.
pub fn reference_resample(cube: &Hypercube, draw: &DrawRecord, fill: f64) -> Vec<f64> {
    let (l, s, b) = cube.dims();
    let mut out = vec![0.0; l * s * b];
    for band in 0..b {
        for r in 0..l {
            for c in 0..s {
                let (sr, sc) = reference_source(draw, l, s, r, c);
                out[band * l * s + r * s + c] = match reference_bilinear_taps(sr, sc, l, s) {
                    None => fill,
                    Some(taps) => taps.iter().map(|&(i, j, w)| w * cube.get(i, j, band)).sum(),
                };
            }
        }
    }
    out
}
