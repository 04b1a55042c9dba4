//! Spectrum extraction from clipped cubes, plus chart and CSV output.

mod chart;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::envi::{self, EnviError};
use crate::hypercube::Hypercube;
use crate::wavelengths::{load_wavelengths, WavelengthError};

pub use chart::{render_svg, write_csv};

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("pixel ({row}, {col}) outside {lines}x{samples} cube")]
    OutOfBounds {
        row: usize,
        col: usize,
        lines: usize,
        samples: usize,
    },
    #[error("empty region of interest")]
    EmptyRoi,
    #[error("leaf cube not found: {}", join_paths(.0))]
    LeafNotFound(Vec<PathBuf>),
    #[error("nothing to plot")]
    EmptyRequest,
    #[error("bad item `{0}` (expected STEM:LEAF)")]
    BadItem(String),
    #[error(transparent)]
    Envi(#[from] EnviError),
    #[error(transparent)]
    Wavelength(#[from] WavelengthError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn join_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// Wavelengths in nm, or band indices.
    pub x_axis: Vec<f64>,
    pub x_is_wavelength: bool,
    pub label: String,
}

impl Spectrum {
    fn from_cube(cube: &Hypercube, values: Vec<f64>, label: String) -> Self {
        let (x_axis, x_is_wavelength) = match cube.wavelengths() {
            Some(w) => (w.to_vec(), true),
            None => (band_axis(values.len()), false),
        };
        Self {
            values,
            x_axis,
            x_is_wavelength,
            label,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Replace the x axis with band indices.
    pub fn with_band_axis(mut self) -> Self {
        self.x_axis = band_axis(self.values.len());
        self.x_is_wavelength = false;
        self
    }
}

fn band_axis(n: usize) -> Vec<f64> {
    (0..n).map(|b| b as f64).collect()
}

fn default_label(cube: &Hypercube) -> String {
    cube.source_stem().unwrap_or("spectrum").to_string()
}

/// Spectrum at (lines/2, samples/2), rounded down.
pub fn center_pixel_spectrum(cube: &Hypercube) -> Spectrum {
    let (r, c) = (cube.lines() / 2, cube.samples() / 2);
    Spectrum::from_cube(cube, cube.spectrum(r, c), default_label(cube))
}

pub fn pixel_spectrum(cube: &Hypercube, row: usize, col: usize) -> Result<Spectrum, SpectraError> {
    if row >= cube.lines() || col >= cube.samples() {
        return Err(SpectraError::OutOfBounds {
            row,
            col,
            lines: cube.lines(),
            samples: cube.samples(),
        });
    }
    Ok(Spectrum::from_cube(
        cube,
        cube.spectrum(row, col),
        format!("{} ({row}, {col})", default_label(cube)),
    ))
}

/// Inclusive rectangle of pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Roi {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

impl Roi {
    pub fn area(&self) -> usize {
        (self.max_row + 1).saturating_sub(self.min_row)
            * (self.max_col + 1).saturating_sub(self.min_col)
    }
}

/// Per-band mean over `roi`.
pub fn roi_mean_spectrum(cube: &Hypercube, roi: Roi) -> Result<Spectrum, SpectraError> {
    if roi.min_row > roi.max_row || roi.min_col > roi.max_col {
        return Err(SpectraError::EmptyRoi);
    }
    if roi.max_row >= cube.lines() || roi.max_col >= cube.samples() {
        return Err(SpectraError::OutOfBounds {
            row: roi.max_row,
            col: roi.max_col,
            lines: cube.lines(),
            samples: cube.samples(),
        });
    }
    let n = roi.area() as f64;
    let s = cube.samples();
    let values = (0..cube.bands())
        .map(|b| {
            let band = cube.band(b);
            let mut sum = 0.0;
            for i in roi.min_row..=roi.max_row {
                sum += band[i * s + roi.min_col..=i * s + roi.max_col]
                    .iter()
                    .sum::<f64>();
            }
            sum / n
        })
        .collect();
    let label = format!(
        "{} mean ({}, {})-({}, {})",
        default_label(cube),
        roi.min_row,
        roi.min_col,
        roi.max_row,
        roi.max_col
    );
    Ok(Spectrum::from_cube(cube, values, label))
}

/// Where the x axis of a plot comes from.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum WavelengthSource {
    /// Band indices 0..B-1.
    #[default]
    BandIndex,
    /// The `wavelength` key of each cube's header.
    Header,
    /// A `.mat` or `.csv` wavelength file.
    File(PathBuf),
}

/// Files written by one plot call.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotOutput {
    pub chart: PathBuf,
    pub csv: PathBuf,
    pub warnings: Vec<String>,
}

/// Resolve the x axis for a loaded cube, recording a warning on fallback.
fn apply_axis(
    cube: &mut Hypercube,
    source: &WavelengthSource,
    file_wl: Option<&[f64]>,
    name: &str,
    warnings: &mut Vec<String>,
) {
    let wl = match source {
        WavelengthSource::BandIndex => None,
        WavelengthSource::Header => {
            if cube.wavelengths().is_none() {
                warnings.push(format!(
                    "{name}: header has no wavelengths, using band indices"
                ));
            }
            return;
        }
        WavelengthSource::File(_) => file_wl,
    };
    match wl {
        Some(w) if w.len() == cube.bands() => {
            cube.set_wavelengths(Some(w.to_vec()))
                .expect("validated wavelength file");
        }
        Some(w) => {
            warnings.push(format!(
                "{name}: {} wavelengths for {} bands, using band indices",
                w.len(),
                cube.bands()
            ));
            cube.set_wavelengths(None).expect("clearing wavelengths");
        }
        None => cube.set_wavelengths(None).expect("clearing wavelengths"),
    }
}

/// `<dir>/<stem>_leaf_<n>.hdr`
pub fn leaf_header(clipped_dir: &Path, stem: &str, leaf: usize) -> PathBuf {
    clipped_dir.join(format!("{stem}_leaf_{leaf}.hdr"))
}

/// Parse a `STEM:LEAF` item. The split is at the last colon so Windows
/// drive letters in stems do not matter.
pub fn parse_item(s: &str) -> Result<(String, usize), SpectraError> {
    let bad = || SpectraError::BadItem(s.to_string());
    let (stem, leaf) = s.rsplit_once(':').ok_or_else(bad)?;
    if stem.is_empty() {
        return Err(bad());
    }
    Ok((stem.to_string(), leaf.trim().parse().map_err(|_| bad())?))
}

/// Load center spectra for (stem, leaf) pairs, reporting every missing
/// file at once.
fn load_center_spectra(
    clipped_dir: &Path,
    items: &[(String, usize)],
    source: &WavelengthSource,
) -> Result<(Vec<Spectrum>, Vec<String>), SpectraError> {
    if items.is_empty() {
        return Err(SpectraError::EmptyRequest);
    }
    let missing: Vec<PathBuf> = items
        .iter()
        .map(|(s, n)| leaf_header(clipped_dir, s, *n))
        .filter(|p| !p.is_file() || envi::companion_binary(p).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(SpectraError::LeafNotFound(missing));
    }
    let file_wl = match source {
        WavelengthSource::File(p) => Some(load_wavelengths(p)?),
        _ => None,
    };
    let mut warnings = Vec::new();
    let mut spectra = Vec::with_capacity(items.len());
    for (stem, leaf) in items {
        let path = leaf_header(clipped_dir, stem, *leaf);
        let mut cube = envi::read_cube(&path)?;
        let name = format!("{stem}_leaf_{leaf}");
        apply_axis(&mut cube, source, file_wl.as_deref(), &name, &mut warnings);
        spectra.push(center_pixel_spectrum(&cube).with_label(format!("{stem} leaf {leaf}")));
    }
    Ok((spectra, warnings))
}

/// Series must share one x axis; otherwise all fall back to band indices.
fn unify_axes(spectra: Vec<Spectrum>, warnings: &mut Vec<String>) -> Vec<Spectrum> {
    let same = spectra
        .windows(2)
        .all(|w| w[0].x_axis == w[1].x_axis && w[0].x_is_wavelength == w[1].x_is_wavelength);
    if same {
        return spectra;
    }
    warnings.push("series have different x axes, using band indices".to_string());
    spectra.into_iter().map(Spectrum::with_band_axis).collect()
}

/// Write `chart` (SVG) and its CSV sidecar (same path, `.csv`).
pub fn plot_spectra(
    spectra: &[Spectrum],
    title: &str,
    chart: &Path,
) -> Result<PlotOutput, SpectraError> {
    if spectra.is_empty() {
        return Err(SpectraError::EmptyRequest);
    }
    let mut warnings = Vec::new();
    let spectra = unify_axes(spectra.to_vec(), &mut warnings);
    if let Some(dir) = chart.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| SpectraError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let svg = render_svg(&spectra, title);
    fs::write(chart, svg).map_err(|source| SpectraError::Io {
        path: chart.to_path_buf(),
        source,
    })?;
    let csv_path = chart.with_extension("csv");
    write_csv(&spectra, &csv_path).map_err(|source| SpectraError::Csv {
        path: csv_path.clone(),
        source,
    })?;
    Ok(PlotOutput {
        chart: chart.to_path_buf(),
        csv: csv_path,
        warnings,
    })
}

#[derive(Clone, Debug, Default)]
pub struct LeafPlot {
    pub clipped_dir: PathBuf,
    pub stem: String,
    pub leaves: Vec<usize>,
    pub wavelengths: WavelengthSource,
    pub title: Option<String>,
    /// Defaults to `<clipped_dir>/<stem>_center_spectra.svg`.
    pub out: Option<PathBuf>,
    /// Accepted for API parity; rendering is always to file.
    pub show: bool,
}

/// Center-pixel spectra of several leaves of one sample.
pub fn plot_leaf_center(req: &LeafPlot) -> Result<PlotOutput, SpectraError> {
    let items: Vec<(String, usize)> = req.leaves.iter().map(|&n| (req.stem.clone(), n)).collect();
    let (spectra, mut warnings) = load_center_spectra(&req.clipped_dir, &items, &req.wavelengths)?;
    let chart = req.out.clone().unwrap_or_else(|| {
        req.clipped_dir
            .join(format!("{}_center_spectra.svg", req.stem))
    });
    let title = req
        .title
        .clone()
        .unwrap_or_else(|| format!("{} center-pixel spectra", req.stem));
    let mut out = plot_spectra(&spectra, &title, &chart)?;
    warnings.append(&mut out.warnings);
    out.warnings = warnings;
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct MultiPlot {
    pub clipped_dir: PathBuf,
    pub items: Vec<(String, usize)>,
    pub wavelengths: WavelengthSource,
    pub title: Option<String>,
    /// Defaults to `<clipped_dir>/multi_spectra.svg`.
    pub out: Option<PathBuf>,
}

/// Center-pixel spectra of leaves from different samples, in item order.
pub fn plot_leaf_multi(req: &MultiPlot) -> Result<PlotOutput, SpectraError> {
    let (spectra, mut warnings) =
        load_center_spectra(&req.clipped_dir, &req.items, &req.wavelengths)?;
    let chart = req
        .out
        .clone()
        .unwrap_or_else(|| req.clipped_dir.join("multi_spectra.svg"));
    let title = req.title.as_deref().unwrap_or("Leaf spectra comparison");
    let mut out = plot_spectra(&spectra, title, &chart)?;
    warnings.append(&mut out.warnings);
    out.warnings = warnings;
    Ok(out)
}
