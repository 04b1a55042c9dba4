//! Leaf-level hyperspectral preprocessing.
//!
//! ENVI and MAT-5 I/O, dark calibration with binning, vegetation-index
//! segmentation into per-leaf cubes, geometric augmentation and spectral
//! plots. Each folder-level stage returns a [`report::StageReport`].

pub mod augmentation;
pub mod calibration;
pub mod cube;
pub mod envi;
pub mod hypercube;
pub mod indices;
pub mod matio;
pub mod report;
pub mod segmentation;
pub mod spectra;
pub mod wavelengths;

pub use hypercube::{CubeShapeError, Hypercube};
pub use report::{InputReport, StageReport, Status};
