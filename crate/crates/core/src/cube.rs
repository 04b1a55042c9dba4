//! Numeric kernels over hypercubes: dark subtraction, reflectance,
//! spectral and spatial binning, wavelength lookup.

use thiserror::Error;

use crate::hypercube::Hypercube;

/// Denominator guard for reflectance, in input units.
pub const REFLECTANCE_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CubeError {
    #[error("shape mismatch: {a:?} vs {b:?}")]
    ShapeMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("bin factor must be >= 1, got {0}")]
    InvalidBinFactor(usize),
    #[error("bin factor {k} exceeds dimension {dim}; result would be empty")]
    EmptyResult { k: usize, dim: usize },
}

/// Spectral and spatial bin factors, both at least 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinningParams {
    spectral_k: usize,
    spatial_k: usize,
}

impl BinningParams {
    pub fn new(spectral_k: usize, spatial_k: usize) -> Result<Self, CubeError> {
        if spectral_k == 0 {
            return Err(CubeError::InvalidBinFactor(spectral_k));
        }
        if spatial_k == 0 {
            return Err(CubeError::InvalidBinFactor(spatial_k));
        }
        Ok(Self {
            spectral_k,
            spatial_k,
        })
    }

    pub fn spectral_k(&self) -> usize {
        self.spectral_k
    }

    pub fn spatial_k(&self) -> usize {
        self.spatial_k
    }
}

impl Default for BinningParams {
    fn default() -> Self {
        Self {
            spectral_k: 3,
            spatial_k: 3,
        }
    }
}

fn same_shape(a: &Hypercube, b: &Hypercube) -> Result<(), CubeError> {
    if a.dims() != b.dims() {
        return Err(CubeError::ShapeMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    Ok(())
}

/// Result of dark subtraction with the number of values clamped at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DarkCorrected {
    pub cube: Hypercube,
    pub clamped: usize,
}

/// `raw - dark`, negatives clamped to 0. Wavelengths follow `raw`.
pub fn subtract_dark(raw: &Hypercube, dark: &Hypercube) -> Result<DarkCorrected, CubeError> {
    same_shape(raw, dark)?;
    let mut clamped = 0;
    let data = raw
        .as_bsq()
        .iter()
        .zip(dark.as_bsq())
        .map(|(&r, &d)| {
            let v = r - d;
            if v < 0.0 {
                clamped += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    let (l, s, b) = raw.dims();
    let mut cube = raw.with_data_like(l, s, b, data);
    cube.set_wavelengths_unchecked(raw.wavelengths().map(<[f64]>::to_vec));
    Ok(DarkCorrected { cube, clamped })
}

/// Reflectance with the count of guarded (invalid) values.
#[derive(Clone, Debug, PartialEq)]
pub struct Reflectance {
    pub cube: Hypercube,
    pub invalid: usize,
}

/// `(raw - dark) / (white - dark)` per element; zero where `white - dark <= eps`.
pub fn reflectance(
    raw: &Hypercube,
    dark: &Hypercube,
    white: &Hypercube,
) -> Result<Reflectance, CubeError> {
    same_shape(raw, dark)?;
    same_shape(raw, white)?;
    let mut invalid = 0;
    let data = raw
        .as_bsq()
        .iter()
        .zip(dark.as_bsq())
        .zip(white.as_bsq())
        .map(|((&r, &d), &w)| {
            let den = w - d;
            if den <= REFLECTANCE_EPS {
                invalid += 1;
                0.0
            } else {
                (r - d) / den
            }
        })
        .collect();
    let (l, s, b) = raw.dims();
    let mut cube = raw.with_data_like(l, s, b, data);
    cube.set_wavelengths_unchecked(raw.wavelengths().map(<[f64]>::to_vec));
    Ok(Reflectance { cube, invalid })
}

fn check_factor(k: usize, dims: &[usize]) -> Result<(), CubeError> {
    if k == 0 {
        return Err(CubeError::InvalidBinFactor(k));
    }
    if let Some(&dim) = dims.iter().find(|&&d| k > d) {
        return Err(CubeError::EmptyResult { k, dim });
    }
    Ok(())
}

fn group_means(values: &[f64], k: usize) -> Vec<f64> {
    values
        .chunks_exact(k)
        .map(|g| g.iter().sum::<f64>() / k as f64)
        .collect()
}

/// Average every `k` adjacent bands; a trailing partial group is dropped.
pub fn spectral_bin(cube: &Hypercube, k: usize) -> Result<Hypercube, CubeError> {
    check_factor(k, &[cube.bands()])?;
    if k == 1 {
        return Ok(cube.clone());
    }
    let (lines, samples, bands) = cube.dims();
    let out_bands = bands / k;
    let plane = lines * samples;
    let mut data = vec![0.0; plane * out_bands];
    for g in 0..out_bands {
        let out = &mut data[g * plane..(g + 1) * plane];
        for b in g * k..g * k + k {
            for (o, v) in out.iter_mut().zip(cube.band(b)) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= k as f64;
        }
    }
    let mut binned = cube.with_data_like(lines, samples, out_bands, data);
    binned.set_wavelengths_unchecked(cube.wavelengths().map(|wl| group_means(wl, k)));
    Ok(binned)
}

/// Average non-overlapping `k x k` blocks; trailing rows/columns are dropped.
pub fn spatial_bin(cube: &Hypercube, k: usize) -> Result<Hypercube, CubeError> {
    check_factor(k, &[cube.lines(), cube.samples()])?;
    if k == 1 {
        return Ok(cube.clone());
    }
    let (lines, samples, bands) = cube.dims();
    let (out_l, out_s) = (lines / k, samples / k);
    let area = (k * k) as f64;
    let mut data = Vec::with_capacity(out_l * out_s * bands);
    for b in 0..bands {
        let band = cube.band(b);
        for oi in 0..out_l {
            for oj in 0..out_s {
                let mut sum = 0.0;
                for i in oi * k..oi * k + k {
                    let row = &band[i * samples + oj * k..i * samples + oj * k + k];
                    sum += row.iter().sum::<f64>();
                }
                data.push(sum / area);
            }
        }
    }
    let mut binned = cube.with_data_like(out_l, out_s, bands, data);
    binned.set_wavelengths_unchecked(cube.wavelengths().map(<[f64]>::to_vec));
    Ok(binned)
}

/// Index of the wavelength nearest `target_nm`; ties go to the lower index.
///
/// Panics on an empty slice.
pub fn band_at_wavelength(wavelengths: &[f64], target_nm: f64) -> usize {
    assert!(!wavelengths.is_empty(), "empty wavelength vector");
    let mut best = 0;
    let mut best_d = (wavelengths[0] - target_nm).abs();
    for (i, &w) in wavelengths.iter().enumerate().skip(1) {
        let d = (w - target_nm).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}
