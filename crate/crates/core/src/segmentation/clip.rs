//! Folder-level leaf clipping: index, threshold, clean, label, filter, crop,
//! and write each leaf as `<stem>_leaf_<n>.hdr/.img`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use super::{
    clean_mask, crop_regions, filter_min_area, label_components, otsu_threshold, threshold_mask,
    Connectivity, CropMode, LeafCrop, Morphology, RegionSet, SegmentationError,
};
use crate::envi::{self, EnviError, Interleave, WriteOptions};
use crate::hypercube::Hypercube;
use crate::indices::{compute_index, BandSelection, IndexError, IndexImage, IndexKind};
use crate::report::{InputReport, StageReport, Status};

/// Default output subfolder for clipped leaves.
pub const CLIP_DIR: &str = "clipped_hypercubes";

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum ThresholdMode {
    /// Otsu on the valid index values.
    #[default]
    Auto,
    Manual(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipParams {
    pub threshold_mode: ThresholdMode,
    pub min_area: usize,
    pub crop_mode: CropMode,
    pub morphology: Morphology,
    pub connectivity: Connectivity,
}

impl Default for ClipParams {
    fn default() -> Self {
        Self {
            threshold_mode: ThresholdMode::Auto,
            min_area: 100,
            crop_mode: CropMode::Square(30),
            morphology: Morphology::default(),
            connectivity: Connectivity::default(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ClipOptions {
    pub index: IndexKind,
    pub selection: BandSelection,
    /// Overrides the wavelengths carried by each cube's header.
    pub wavelengths: Option<Vec<f64>>,
    pub params: ClipParams,
    /// Defaults to `<folder>/clipped_hypercubes`.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("no ENVI inputs found in {}", .0.display())]
    NoInputsFound(PathBuf),
    #[error(transparent)]
    Envi(#[from] EnviError),
    #[error("cannot create {}: {source}", path.display())]
    OutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failure while clipping a single file.
#[derive(Debug, Error)]
pub enum LeafFileError {
    #[error(transparent)]
    Envi(#[from] EnviError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error("wavelength vector has {given} entries but cube has {bands} bands")]
    WavelengthCount { given: usize, bands: usize },
}

/// Intermediate products of segmenting one cube.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub index: IndexImage,
    pub threshold: f64,
    pub regions: RegionSet,
}

/// Index, threshold, clean, label and filter.
pub fn segment(
    cube: &Hypercube,
    kind: IndexKind,
    selection: &BandSelection,
    params: &ClipParams,
) -> Result<Segmentation, LeafFileError> {
    let index = compute_index(cube, kind, selection)?;
    let threshold = match params.threshold_mode {
        ThresholdMode::Auto => otsu_threshold(&index)?,
        ThresholdMode::Manual(t) => t,
    };
    let mask = clean_mask(&threshold_mask(&index, threshold), params.morphology);
    let regions = filter_min_area(
        &label_components(&mask, params.connectivity),
        params.min_area,
    );
    Ok(Segmentation {
        index,
        threshold,
        regions,
    })
}

/// Segment a cube and crop its leaves.
pub fn clip_cube(
    cube: &Hypercube,
    kind: IndexKind,
    selection: &BandSelection,
    params: &ClipParams,
) -> Result<(Segmentation, Vec<LeafCrop>), LeafFileError> {
    let seg = segment(cube, kind, selection, params)?;
    let crops = crop_regions(cube, &seg.regions, params.crop_mode);
    Ok((seg, crops))
}

fn clip_one(
    header: &Path,
    opts: &ClipOptions,
    out_dir: &Path,
) -> Result<InputReport, LeafFileError> {
    let (hdr, mut cube) = envi::read_envi(header)?;
    if let Some(wl) = &opts.wavelengths {
        if wl.len() != cube.bands() {
            return Err(LeafFileError::WavelengthCount {
                given: wl.len(),
                bands: cube.bands(),
            });
        }
        cube.set_wavelengths(Some(wl.clone()))
            .expect("length checked above");
    }
    let (seg, crops) = clip_cube(&cube, opts.index, &opts.selection, &opts.params)?;
    let stem = envi::stem_of(header);
    let write_opts = WriteOptions::new(Interleave::Bsq, hdr.data_type);
    let mut outputs = Vec::new();
    let mut warnings = Vec::new();
    for crop in &crops {
        let base = out_dir.join(format!("{stem}_leaf_{}", crop.label));
        let (h, i) = envi::write_cube_with(&crop.cube, &base, &write_opts)?;
        outputs.push(h);
        outputs.push(i);
        warnings.extend(crop.warning.clone());
    }
    let status = if crops.is_empty() {
        Status::NoRegions
    } else {
        Status::Success
    };
    Ok(InputReport {
        status,
        threshold: Some(seg.threshold),
        leaf_count: Some(crops.len()),
        warnings,
        ..InputReport::success(header.to_path_buf(), outputs)
    })
}

/// Clip every ENVI cube in `folder`. Per-file failures are recorded and the
/// batch continues.
pub fn clip_folder(folder: &Path, opts: &ClipOptions) -> Result<StageReport, ClipError> {
    let scan = envi::scan_folder(folder)?;
    if scan.headers.is_empty() {
        return Err(ClipError::NoInputsFound(folder.to_path_buf()));
    }
    let out_dir = opts
        .output_dir
        .clone()
        .unwrap_or_else(|| folder.join(CLIP_DIR));
    fs::create_dir_all(&out_dir).map_err(|source| ClipError::OutputDir {
        path: out_dir.clone(),
        source,
    })?;
    let inputs = scan
        .headers
        .par_iter()
        .map(|h| clip_one(h, opts, &out_dir).unwrap_or_else(|e| InputReport::failed(h.clone(), e)))
        .collect();
    Ok(StageReport {
        stage: "clipping".to_string(),
        inputs,
        warnings: scan.warnings,
    })
}
