//! Random geometric augmentation of leaf cubes. One inverse affine map is
//! drawn per variant and applied to every band.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::envi::{self, DataType, EnviError, Interleave, WriteOptions};
use crate::hypercube::Hypercube;
use crate::report::{InputReport, StageReport};

/// Source coordinates within this distance of the image edge are clamped
/// rather than filled.
const EDGE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

impl FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nearest" => Ok(Interpolation::Nearest),
            "bilinear" => Ok(Interpolation::Bilinear),
            other => Err(format!(
                "unknown interpolation `{other}` (expected nearest or bilinear)"
            )),
        }
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::Nearest => "nearest",
            Interpolation::Bilinear => "bilinear",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("num_aug must be at least 1")]
    ZeroCount,
    #[error("{name} range [{lo}, {hi}] is invalid")]
    BadRange {
        name: &'static str,
        lo: f64,
        hi: f64,
    },
    #[error("fill value must be finite")]
    NonFiniteFill,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub num_aug: usize,
    pub flip: bool,
    /// Degrees, inclusive.
    pub rotate_deg: (f64, f64),
    /// Degrees, inclusive; shear runs along the sample axis.
    pub shear_deg: (f64, f64),
    pub seed: Option<u64>,
    pub interpolation: Interpolation,
    pub fill_value: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            num_aug: 3,
            flip: true,
            rotate_deg: (-10.0, 10.0),
            shear_deg: (-16.0, 16.0),
            seed: None,
            interpolation: Interpolation::Bilinear,
            fill_value: 0.0,
        }
    }
}

impl AugmentationSpec {
    /// No-op transform: zero-width ranges and no flips.
    pub fn identity() -> Self {
        Self {
            num_aug: 1,
            flip: false,
            rotate_deg: (0.0, 0.0),
            shear_deg: (0.0, 0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.num_aug == 0 {
            return Err(SpecError::ZeroCount);
        }
        let check = |name, (lo, hi): (f64, f64), limit: f64| {
            if lo.is_finite() && hi.is_finite() && lo <= hi && lo.abs() < limit && hi.abs() < limit
            {
                Ok(())
            } else {
                Err(SpecError::BadRange { name, lo, hi })
            }
        };
        check("rotate", self.rotate_deg, f64::INFINITY)?;
        // tan blows up at ±90
        check("shear", self.shear_deg, 90.0)?;
        if !self.fill_value.is_finite() {
            return Err(SpecError::NonFiniteFill);
        }
        Ok(())
    }
}

/// The random choices behind one variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DrawRecord {
    pub rotate_deg: f64,
    pub shear_deg: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl DrawRecord {
    pub fn identity() -> Self {
        Self {
            rotate_deg: 0.0,
            shear_deg: 0.0,
            flip_horizontal: false,
            flip_vertical: false,
        }
    }
}

/// Inverse map: `[src_row, src_col] = m * [row, col, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    /// Compose flip, then rotation, then shear about the centre of a
    /// `lines` x `samples` image, and return the inverse.
    pub fn from_draw(draw: &DrawRecord, lines: usize, samples: usize) -> Self {
        let cy = (lines as f64 - 1.0) / 2.0;
        let cx = (samples as f64 - 1.0) / 2.0;
        // Work in (x, y) = (col, row) offsets from the centre.
        let fx = if draw.flip_horizontal { -1.0 } else { 1.0 };
        let fy = if draw.flip_vertical { -1.0 } else { 1.0 };
        let (s, c) = draw.rotate_deg.to_radians().sin_cos();
        let t = draw.shear_deg.to_radians().tan();
        // inverse shear [[1, -t], [0, 1]], inverse rotation [[c, s], [-s, c]]
        let r_inv_s_inv = [[c, -c * t + s], [-s, s * t + c]];
        let a = [
            [fx * r_inv_s_inv[0][0], fx * r_inv_s_inv[0][1]],
            [fy * r_inv_s_inv[1][0], fy * r_inv_s_inv[1][1]],
        ];
        // src_x = cx + a00 dx + a01 dy ; src_y = cy + a10 dx + a11 dy
        Self {
            m: [
                [a[1][1], a[1][0], cy - a[1][1] * cy - a[1][0] * cx],
                [a[0][1], a[0][0], cx - a[0][1] * cy - a[0][0] * cx],
            ],
        }
    }

    #[inline]
    pub fn source(&self, row: f64, col: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * row + m[0][1] * col + m[0][2],
            m[1][0] * row + m[1][1] * col + m[1][2],
        )
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }
}

/// Draw one variant's parameters. Rotation, shear and the two flips are
/// drawn in that order; flips consume no randomness when disabled.
pub fn sample_draw<R: Rng + ?Sized>(spec: &AugmentationSpec, rng: &mut R) -> DrawRecord {
    let uniform = |rng: &mut R, (lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let rotate_deg = uniform(rng, spec.rotate_deg);
    let shear_deg = uniform(rng, spec.shear_deg);
    let (flip_horizontal, flip_vertical) = if spec.flip {
        (rng.random_bool(0.5), rng.random_bool(0.5))
    } else {
        (false, false)
    };
    DrawRecord {
        rotate_deg,
        shear_deg,
        flip_horizontal,
        flip_vertical,
    }
}

pub fn sample_transform<R: Rng + ?Sized>(
    spec: &AugmentationSpec,
    rng: &mut R,
    lines: usize,
    samples: usize,
) -> (AffineTransform, DrawRecord) {
    let draw = sample_draw(spec, rng);
    (AffineTransform::from_draw(&draw, lines, samples), draw)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Independent stream per (seed, stem).
pub fn rng_for(seed: u64, stem: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(stem))
}

/// Up to four source pixels and their weights; empty means fill.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub taps: [(usize, usize, f64); 4],
    pub len: usize,
}

impl Stencil {
    const EMPTY: Stencil = Stencil {
        taps: [(0, 0, 0.0); 4],
        len: 0,
    };

    pub fn taps(&self) -> &[(usize, usize, f64)] {
        &self.taps[..self.len]
    }
}

/// 1-D bilinear split of `v` in `[0, n-1]`.
fn split(v: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let v = v.clamp(0.0, (n - 1) as f64);
    let i = (v.floor() as usize).min(n - 2);
    (i, v - i as f64)
}

/// The sampling stencil for output pixel (row, col).
pub fn stencil(
    t: &AffineTransform,
    interpolation: Interpolation,
    lines: usize,
    samples: usize,
    row: usize,
    col: usize,
) -> Stencil {
    let (sr, sc) = t.source(row as f64, col as f64);
    let mut out = Stencil::EMPTY;
    match interpolation {
        Interpolation::Nearest => {
            let (r, c) = (sr.round(), sc.round());
            if r >= 0.0 && c >= 0.0 && r < lines as f64 && c < samples as f64 {
                out.taps[0] = (r as usize, c as usize, 1.0);
                out.len = 1;
            }
        }
        Interpolation::Bilinear => {
            let inside = |v: f64, n: usize| v >= -EDGE_TOL && v <= (n - 1) as f64 + EDGE_TOL;
            if !(inside(sr, lines) && inside(sc, samples)) {
                return out;
            }
            let (r0, fr) = split(sr, lines);
            let (c0, fc) = split(sc, samples);
            let r1 = (r0 + 1).min(lines - 1);
            let c1 = (c0 + 1).min(samples - 1);
            for (r, c, w) in [
                (r0, c0, (1.0 - fr) * (1.0 - fc)),
                (r0, c1, (1.0 - fr) * fc),
                (r1, c0, fr * (1.0 - fc)),
                (r1, c1, fr * fc),
            ] {
                if w != 0.0 {
                    out.taps[out.len] = (r, c, w);
                    out.len += 1;
                }
            }
        }
    }
    out
}

/// Resample every band through `t`. Output keeps the input's size and
/// wavelengths.
pub fn apply_transform(
    cube: &Hypercube,
    t: &AffineTransform,
    interpolation: Interpolation,
    fill: f64,
) -> Hypercube {
    let (l, s, b) = cube.dims();
    let plane = l * s;
    let stencils: Vec<Stencil> = (0..plane)
        .map(|p| stencil(t, interpolation, l, s, p / s, p % s))
        .collect();
    let src = cube.as_bsq();
    let mut data = vec![0.0; plane * b];
    data.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(band, out)| {
            let base = &src[band * plane..(band + 1) * plane];
            for (o, st) in out.iter_mut().zip(&stencils) {
                *o = if st.len == 0 {
                    fill
                } else {
                    st.taps().iter().map(|&(r, c, w)| w * base[r * s + c]).sum()
                };
            }
        });
    let mut out = cube.with_data_like(l, s, b, data);
    out.set_wavelengths_unchecked(cube.wavelengths().map(<[f64]>::to_vec));
    out
}

/// Stems produced by a previous augmentation run.
pub fn is_augmented_stem(stem: &str) -> bool {
    match stem.rfind("_aug") {
        Some(i) => {
            let tail = &stem[i + 4..];
            !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit())
        }
        None => false,
    }
}

/// Augmented outputs are float64 only when the source already is.
pub fn output_data_type(source: DataType) -> DataType {
    if source == DataType::F64 {
        DataType::F64
    } else {
        DataType::F32
    }
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error(transparent)]
    Spec(#[from] SpecError),
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

fn augment_one(
    header: &Path,
    spec: &AugmentationSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<InputReport, EnviError> {
    let (hdr, cube) = envi::read_envi(header)?;
    let stem = envi::stem_of(header);
    let mut rng = rng_for(seed, &stem);
    let opts = WriteOptions::new(Interleave::Bsq, output_data_type(hdr.data_type));
    let mut outputs = Vec::new();
    let mut draws = Vec::new();
    for k in 1..=spec.num_aug {
        let (t, draw) = sample_transform(spec, &mut rng, cube.lines(), cube.samples());
        let out = apply_transform(&cube, &t, spec.interpolation, spec.fill_value);
        let (h, i) = envi::write_cube_with(&out, &out_dir.join(format!("{stem}_aug{k}")), &opts)?;
        outputs.push(h);
        outputs.push(i);
        draws.push(draw);
    }
    Ok(InputReport {
        draws: Some(draws),
        ..InputReport::success(header.to_path_buf(), outputs)
    })
}

/// Write `num_aug` variants of every cube in `folder`. Cubes that are
/// themselves augmentation outputs are skipped.
pub fn augment_folder(
    folder: &Path,
    spec: &AugmentationSpec,
    output_dir: Option<&Path>,
) -> Result<StageReport, AugmentError> {
    spec.validate()?;
    let scan = envi::scan_folder(folder)?;
    let headers: Vec<PathBuf> = scan
        .headers
        .into_iter()
        .filter(|h| !is_augmented_stem(&envi::stem_of(h)))
        .collect();
    if headers.is_empty() {
        return Err(AugmentError::NoInputsFound(folder.to_path_buf()));
    }
    let out_dir = output_dir.unwrap_or(folder).to_path_buf();
    fs::create_dir_all(&out_dir).map_err(|source| AugmentError::OutputDir {
        path: out_dir.clone(),
        source,
    })?;
    let seed = spec.seed.unwrap_or_else(|| rand::rng().random());
    let inputs = headers
        .par_iter()
        .map(|h| {
            augment_one(h, spec, seed, &out_dir)
                .unwrap_or_else(|e| InputReport::failed(h.clone(), e))
        })
        .collect();
    Ok(StageReport {
        stage: "augmentation".to_string(),
        inputs,
        warnings: scan.warnings,
    })
}
