//! Folder-level dark calibration of `_R` / `_F` acquisitions.
//!
//! Each `<stem>_R` / `<stem>_F` ENVI pair is paired with `<dark_base>_R` /
//! `<dark_base>_F`, dark-subtracted, spectrally then spatially binned, and
//! written to `<stem>_R.mat` / `<stem>_F.mat` holding `cube` and, when the
//! raw header carries them, the binned `wavelength` vector.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::cube::{self, BinningParams, CubeError};
use crate::envi::{self, EnviError};
use crate::hypercube::Hypercube;
use crate::matio::{self, MatArray, MatError};
use crate::report::{InputReport, StageReport};

pub const CUBE_VAR: &str = "cube";
pub const WAVELENGTH_VAR: &str = "wavelength";

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no `_R`/`_F` ENVI inputs found in {}", .0.display())]
    NoInputsFound(PathBuf),
    #[error("dark reference for channel {channel} missing: expected {}", expected.display())]
    DarkMissing { channel: Channel, expected: PathBuf },
    #[error("cannot load dark reference {}: {source}", path.display())]
    DarkLoad {
        path: PathBuf,
        #[source]
        source: EnviError,
    },
    #[error(transparent)]
    Envi(#[from] EnviError),
    #[error("cannot create {}: {source}", path.display())]
    OutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Error for a single input file; recorded in the report, never fatal.
#[derive(Debug, Error)]
pub enum FileError {
    #[error(transparent)]
    Envi(#[from] EnviError),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Mat(#[from] MatError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    R,
    F,
}

impl Channel {
    pub fn suffix(self) -> &'static str {
        match self {
            Channel::R => "_R",
            Channel::F => "_F",
        }
    }

    /// Split a file stem into `(stem, channel)` on its final `_R`/`_F`.
    pub fn split_stem(name: &str) -> Option<(&str, Channel)> {
        if let Some(s) = name.strip_suffix("_R") {
            Some((s, Channel::R))
        } else {
            name.strip_suffix("_F").map(|s| (s, Channel::F))
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::R => "R",
            Channel::F => "F",
        })
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationJob {
    pub folder: PathBuf,
    /// Prefix such that `<dark_base>_R.hdr` and `<dark_base>_F.hdr` exist.
    pub dark_base: PathBuf,
    pub params: BinningParams,
    /// Defaults to `folder`.
    pub output_dir: Option<PathBuf>,
}

impl CalibrationJob {
    pub fn new(folder: impl Into<PathBuf>, dark_base: impl Into<PathBuf>) -> Self {
        Self {
            folder: folder.into(),
            dark_base: dark_base.into(),
            params: BinningParams::default(),
            output_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscoveredInput {
    pub stem: String,
    pub channel: Channel,
    pub header: PathBuf,
}

#[derive(Clone, Debug, Default)]
pub struct Discovery {
    pub inputs: Vec<DiscoveredInput>,
    pub warnings: Vec<String>,
}

fn dark_header(dark_base: &Path, channel: Channel) -> PathBuf {
    let mut s = dark_base.as_os_str().to_os_string();
    s.push(channel.suffix());
    s.push(".hdr");
    PathBuf::from(s)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

/// Find every `<stem>_R.hdr` / `<stem>_F.hdr` with a binary, excluding the dark pair.
pub fn discover_pairs(folder: &Path, dark_base: &Path) -> Result<Discovery, CalibrationError> {
    let scan = envi::scan_folder(folder)?;
    let darks = [
        dark_header(dark_base, Channel::R),
        dark_header(dark_base, Channel::F),
    ];
    let mut found = Discovery {
        inputs: Vec::new(),
        warnings: scan.warnings,
    };
    for header in scan.headers {
        if darks.iter().any(|d| same_file(&header, d)) {
            continue;
        }
        let name = envi::stem_of(&header);
        match Channel::split_stem(&name) {
            Some((stem, channel)) => found.inputs.push(DiscoveredInput {
                stem: stem.to_string(),
                channel,
                header,
            }),
            None => found
                .warnings
                .push(format!("{}: no _R/_F suffix, ignored", header.display())),
        }
    }
    if found.inputs.is_empty() {
        return Err(CalibrationError::NoInputsFound(folder.to_path_buf()));
    }
    Ok(found)
}

/// Dark subtraction, then spectral binning, then spatial binning.
pub fn calibrate_cube(
    raw: &Hypercube,
    dark: &Hypercube,
    params: BinningParams,
) -> Result<(Hypercube, usize), CubeError> {
    let corrected = cube::subtract_dark(raw, dark)?;
    let binned = cube::spectral_bin(&corrected.cube, params.spectral_k())?;
    let binned = cube::spatial_bin(&binned, params.spatial_k())?;
    Ok((binned, corrected.clamped))
}

/// The `cube` (dims `[lines, samples, bands]`, column-major) and optional
/// `wavelength` row vector stored in a calibrated MAT file.
pub fn calibrated_mat_arrays(cube: &Hypercube) -> Vec<MatArray> {
    let (lines, samples, bands) = cube.dims();
    let mut values = Vec::with_capacity(lines * samples * bands);
    for b in 0..bands {
        let band = cube.band(b);
        for j in 0..samples {
            for i in 0..lines {
                values.push(band[i * samples + j]);
            }
        }
    }
    let mut arrays = vec![MatArray {
        name: CUBE_VAR.to_string(),
        dims: vec![lines, samples, bands],
        values,
    }];
    if let Some(wl) = cube.wavelengths() {
        arrays.push(MatArray {
            name: WAVELENGTH_VAR.to_string(),
            dims: vec![1, wl.len()],
            values: wl.to_vec(),
        });
    }
    arrays
}

/// Inverse of [`calibrated_mat_arrays`] for a `cube` variable.
pub fn cube_from_mat(cube: &MatArray, wavelength: Option<&MatArray>) -> Option<Hypercube> {
    let (lines, samples, bands) = match cube.dims.as_slice() {
        [l, s] => (*l, *s, 1),
        [l, s, b] => (*l, *s, *b),
        _ => return None,
    };
    let h = Hypercube::from_fn(lines, samples, bands, |i, j, b| {
        cube.values[i + j * lines + b * lines * samples]
    })
    .ok()?;
    match wavelength {
        Some(w) => h.with_wavelengths(w.values.clone()).ok(),
        None => Some(h),
    }
}

fn load_dark(job: &CalibrationJob, channel: Channel) -> Result<Hypercube, CalibrationError> {
    let path = dark_header(&job.dark_base, channel);
    if !path.is_file() {
        return Err(CalibrationError::DarkMissing {
            channel,
            expected: path,
        });
    }
    envi::read_cube(&path).map_err(|source| CalibrationError::DarkLoad { path, source })
}

fn calibrate_one(
    input: &DiscoveredInput,
    dark: &Hypercube,
    params: BinningParams,
    out_dir: &Path,
) -> Result<(PathBuf, usize), FileError> {
    let raw = envi::read_cube(&input.header)?;
    let (calibrated, clamped) = calibrate_cube(&raw, dark, params)?;
    let out = out_dir.join(format!("{}{}.mat", input.stem, input.channel.suffix()));
    matio::write_mat(&out, &calibrated_mat_arrays(&calibrated))?;
    Ok((out, clamped))
}

/// Calibrate every discovered input. Per-file failures are recorded in the
/// report; only discovery and dark-reference problems abort the run.
pub fn calibrate_folder(job: &CalibrationJob) -> Result<StageReport, CalibrationError> {
    let discovery = discover_pairs(&job.folder, &job.dark_base)?;
    let out_dir = job.output_dir.clone().unwrap_or_else(|| job.folder.clone());
    fs::create_dir_all(&out_dir).map_err(|source| CalibrationError::OutputDir {
        path: out_dir.clone(),
        source,
    })?;

    let dark_r = if discovery.inputs.iter().any(|i| i.channel == Channel::R) {
        Some(load_dark(job, Channel::R)?)
    } else {
        None
    };
    let dark_f = if discovery.inputs.iter().any(|i| i.channel == Channel::F) {
        Some(load_dark(job, Channel::F)?)
    } else {
        None
    };

    let inputs: Vec<InputReport> = discovery
        .inputs
        .par_iter()
        .map(|input| {
            let dark = match input.channel {
                Channel::R => dark_r.as_ref(),
                Channel::F => dark_f.as_ref(),
            }
            .expect("dark loaded for every present channel");
            match calibrate_one(input, dark, job.params, &out_dir) {
                Ok((out, clamped)) => InputReport {
                    invalid_pixels: Some(clamped),
                    ..InputReport::success(input.header.clone(), vec![out])
                },
                Err(e) => InputReport::failed(input.header.clone(), e),
            }
        })
        .collect();

    Ok(StageReport {
        stage: "calibration".to_string(),
        inputs,
        warnings: discovery.warnings,
    })
}
