//! Vegetation index images: NDVI, green chlorophyll index, red-edge
//! chlorophyll index.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cube::band_at_wavelength;
use crate::hypercube::Hypercube;

/// Denominators with magnitude at or below this are treated as invalid.
pub const DENOMINATOR_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("cube has no wavelength vector; supply a wavelength file or explicit band indices")]
    WavelengthsUnavailable,
    #[error("{role} band index {index} out of range for {bands} bands")]
    BandOutOfRange {
        role: &'static str,
        index: usize,
        bands: usize,
    },
    #[error("NIR and {role} resolve to the same band {index}")]
    SameBand { role: &'static str, index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum IndexKind {
    #[default]
    Ndvi,
    Gci,
    CiRedEdge,
}

impl FromStr for IndexKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ndvi" => Ok(IndexKind::Ndvi),
            "gci" => Ok(IndexKind::Gci),
            "cire" | "ci-rededge" | "cirededge" | "ci_rededge" => Ok(IndexKind::CiRedEdge),
            other => Err(format!(
                "unknown index `{other}` (expected ndvi, gci or cire)"
            )),
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndexKind::Ndvi => "ndvi",
            IndexKind::Gci => "gci",
            IndexKind::CiRedEdge => "cire",
        })
    }
}

/// Target wavelengths (nm) used to pick bands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandTargets {
    pub red_nm: f64,
    pub green_nm: f64,
    pub red_edge_nm: f64,
    pub nir_nm: f64,
}

impl Default for BandTargets {
    fn default() -> Self {
        Self {
            red_nm: 670.0,
            green_nm: 550.0,
            red_edge_nm: 717.0,
            nir_nm: 800.0,
        }
    }
}

/// Explicit zero-based band indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BandIndices {
    pub red: usize,
    pub green: usize,
    pub red_edge: usize,
    pub nir: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BandSelection {
    ByWavelength(BandTargets),
    ByIndex(BandIndices),
}

impl Default for BandSelection {
    fn default() -> Self {
        BandSelection::ByWavelength(BandTargets::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolvedBand {
    pub index: usize,
    pub wavelength: Option<f64>,
}

/// Bands that fed the index: NIR plus red, green or red-edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandsUsed {
    pub nir: ResolvedBand,
    pub other: ResolvedBand,
    pub other_role: &'static str,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexImage {
    pub lines: usize,
    pub samples: usize,
    /// Row-major; 0 where invalid.
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub kind: IndexKind,
    pub bands_used: BandsUsed,
}

impl IndexImage {
    pub fn value(&self, line: usize, sample: usize) -> f64 {
        self.values[line * self.samples + sample]
    }

    pub fn is_valid(&self, line: usize, sample: usize) -> bool {
        self.valid[line * self.samples + sample]
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
    }
}

fn other_role(kind: IndexKind) -> &'static str {
    match kind {
        IndexKind::Ndvi => "red",
        IndexKind::Gci => "green",
        IndexKind::CiRedEdge => "red-edge",
    }
}

/// Resolve the (NIR, other) band pair for `kind`.
pub fn resolve_bands(
    cube: &Hypercube,
    kind: IndexKind,
    sel: &BandSelection,
) -> Result<BandsUsed, IndexError> {
    let role = other_role(kind);
    let wl = cube.wavelengths();
    let (nir, other) = match sel {
        BandSelection::ByWavelength(t) => {
            let wl = wl.ok_or(IndexError::WavelengthsUnavailable)?;
            let other_nm = match kind {
                IndexKind::Ndvi => t.red_nm,
                IndexKind::Gci => t.green_nm,
                IndexKind::CiRedEdge => t.red_edge_nm,
            };
            (
                band_at_wavelength(wl, t.nir_nm),
                band_at_wavelength(wl, other_nm),
            )
        }
        BandSelection::ByIndex(ix) => {
            let other = match kind {
                IndexKind::Ndvi => ix.red,
                IndexKind::Gci => ix.green,
                IndexKind::CiRedEdge => ix.red_edge,
            };
            for (r, i) in [("nir", ix.nir), (role, other)] {
                if i >= cube.bands() {
                    return Err(IndexError::BandOutOfRange {
                        role: r,
                        index: i,
                        bands: cube.bands(),
                    });
                }
            }
            (ix.nir, other)
        }
    };
    if nir == other {
        return Err(IndexError::SameBand { role, index: nir });
    }
    let at = |i: usize| ResolvedBand {
        index: i,
        wavelength: wl.map(|w| w[i]),
    };
    Ok(BandsUsed {
        nir: at(nir),
        other: at(other),
        other_role: role,
    })
}

/// Evaluate one index on a pair of reflectances. `None` when the
/// denominator is guarded.
#[inline]
pub fn index_value(kind: IndexKind, nir: f64, other: f64) -> Option<f64> {
    let (num, den) = match kind {
        IndexKind::Ndvi => (nir - other, nir + other),
        IndexKind::Gci | IndexKind::CiRedEdge => (nir, other),
    };
    if den.abs() <= DENOMINATOR_EPS {
        return None;
    }
    Some(match kind {
        IndexKind::Ndvi => num / den,
        _ => num / den - 1.0,
    })
}

/// Per-pixel index image.
pub fn compute_index(
    cube: &Hypercube,
    kind: IndexKind,
    sel: &BandSelection,
) -> Result<IndexImage, IndexError> {
    let bands_used = resolve_bands(cube, kind, sel)?;
    let nir = cube.band(bands_used.nir.index);
    let other = cube.band(bands_used.other.index);
    let mut values = Vec::with_capacity(nir.len());
    let mut valid = Vec::with_capacity(nir.len());
    for (&n, &o) in nir.iter().zip(other) {
        match index_value(kind, n, o) {
            Some(v) => {
                values.push(v);
                valid.push(true);
            }
            None => {
                values.push(0.0);
                valid.push(false);
            }
        }
    }
    Ok(IndexImage {
        lines: cube.lines(),
        samples: cube.samples(),
        values,
        valid,
        kind,
        bands_used,
    })
}
