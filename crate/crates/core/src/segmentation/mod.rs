//! Index-image segmentation: thresholding, mask cleanup, connected
//! components, area filtering and per-leaf cropping.

mod clip;

pub use clip::{
    clip_cube, clip_folder, segment, ClipError, ClipOptions, ClipParams, LeafFileError,
    Segmentation, ThresholdMode, CLIP_DIR,
};

use thiserror::Error;

use crate::hypercube::Hypercube;
use crate::indices::IndexImage;

/// Histogram resolution used by Otsu's method.
pub const OTSU_BINS: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("cannot threshold: {0}")]
    DegenerateHistogram(String),
}

/// Binary `lines x samples` mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub lines: usize,
    pub samples: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(lines: usize, samples: usize) -> Self {
        Self {
            lines,
            samples,
            bits: vec![false; lines * samples],
        }
    }

    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let lines = rows.len();
        let samples = rows.first().map_or(0, |r| r.len());
        let bits = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), samples, "ragged mask rows");
                r.iter().map(|&v| v != 0)
            })
            .collect();
        Self {
            lines,
            samples,
            bits,
        }
    }

    #[inline]
    pub fn get(&self, line: usize, sample: usize) -> bool {
        self.bits[line * self.samples + sample]
    }

    #[inline]
    pub fn set(&mut self, line: usize, sample: usize, v: bool) {
        self.bits[line * self.samples + sample] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// 256-bin histogram of valid values over `[min, max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexHistogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
}

impl IndexHistogram {
    pub fn from_values(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.clone() {
            min = min.min(v);
            max = max.max(v);
        }
        if min >= max {
            return None;
        }
        let mut counts = vec![0u64; OTSU_BINS];
        let scale = OTSU_BINS as f64 / (max - min);
        for v in values {
            let bin = (((v - min) * scale).floor() as usize).min(OTSU_BINS - 1);
            counts[bin] += 1;
        }
        Some(Self { min, max, counts })
    }

    /// Real value of boundary `j` (the lower edge of bin `j`).
    pub fn boundary_value(&self, j: usize) -> f64 {
        self.min + j as f64 * (self.max - self.min) / OTSU_BINS as f64
    }
}

/// `a * b` as a 256-bit `(high, low)` pair, for exact comparisons.
fn mul_wide(a: u128, b: u64) -> (u128, u128) {
    let b = b as u128;
    let lo = (a as u64 as u128) * b;
    let mid = (a >> 64) * b;
    let (low, carry) = lo.overflowing_add(mid << 64);
    ((mid >> 64) + carry as u128, low)
}

/// Otsu boundary on a histogram: the `j` in `1..bins` splitting bins
/// `[0, j)` from `[j, bins)` that maximizes `w0 * w1 * (mu0 - mu1)^2`.
/// Ties go to the smallest `j`. Returns `None` when no split separates two
/// non-empty classes.
///
/// Comparisons are exact: the variance is proportional to `D^2 / (w0 w1)`
/// with integer `D = S0 w1 - S1 w0`, and candidates are compared by cross
/// multiplication. Exact for totals below 2^28 samples.
pub fn otsu_bin_boundary(counts: &[u64]) -> Option<usize> {
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    let sum_total: u128 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();
    let mut w0: u128 = 0;
    let mut s0: u128 = 0;
    // Best so far as (D^2, w0*w1); starts at "zero variance".
    let mut best: Option<(usize, u128, u64)> = None;
    for j in 1..counts.len() {
        w0 += counts[j - 1] as u128;
        s0 += (j as u128 - 1) * counts[j - 1] as u128;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let s1 = sum_total - s0;
        let d = (s1 * w0).abs_diff(s0 * w1);
        let d2 = d * d;
        let q = (w0 * w1) as u64;
        let better = match best {
            None => d2 > 0,
            Some((_, bd2, bq)) => mul_wide(d2, bq) > mul_wide(bd2, q),
        };
        if better {
            best = Some((j, d2, q));
        }
    }
    best.map(|(j, _, _)| j)
}

/// Otsu threshold over the valid pixels of an index image.
pub fn otsu_threshold(img: &IndexImage) -> Result<f64, SegmentationError> {
    let valid = img.valid.iter().filter(|&&v| v).count();
    if valid < 2 {
        return Err(SegmentationError::DegenerateHistogram(format!(
            "{valid} valid pixel(s)"
        )));
    }
    let hist = IndexHistogram::from_values(img.valid_values()).ok_or_else(|| {
        SegmentationError::DegenerateHistogram("all valid pixels share one value".into())
    })?;
    let j = otsu_bin_boundary(&hist.counts)
        .ok_or_else(|| SegmentationError::DegenerateHistogram("no separating boundary".into()))?;
    Ok(hist.boundary_value(j))
}

/// Foreground where the pixel is valid and strictly above `t`.
pub fn threshold_mask(img: &IndexImage, t: f64) -> Mask {
    Mask {
        lines: img.lines,
        samples: img.samples,
        bits: img
            .values
            .iter()
            .zip(&img.valid)
            .map(|(&v, &ok)| ok && v > t)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Morphology {
    None,
    /// Binary opening then closing with a disk of this radius.
    OpenClose(usize),
}

impl Default for Morphology {
    fn default() -> Self {
        Morphology::OpenClose(1)
    }
}

impl Morphology {
    fn radius(self) -> Option<usize> {
        match self {
            Morphology::None | Morphology::OpenClose(0) => None,
            Morphology::OpenClose(r) => Some(r),
        }
    }
}

/// Offsets `(dy, dx)` with `dy^2 + dx^2 <= r^2`.
fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Erosion treats out-of-image pixels as foreground; dilation as background.
fn morph(mask: &Mask, footprint: &[(isize, isize)], erode: bool) -> Mask {
    let (h, w) = (mask.lines as isize, mask.samples as isize);
    let mut out = Mask::new(mask.lines, mask.samples);
    for i in 0..h {
        for j in 0..w {
            let mut hits = footprint.iter().filter_map(|&(dy, dx)| {
                let (y, x) = (i + dy, j + dx);
                (y >= 0 && y < h && x >= 0 && x < w).then(|| mask.get(y as usize, x as usize))
            });
            let v = if erode {
                hits.all(|b| b)
            } else {
                hits.any(|b| b)
            };
            out.set(i as usize, j as usize, v);
        }
    }
    out
}

pub fn erode(mask: &Mask, radius: usize) -> Mask {
    morph(mask, &disk(radius), true)
}

pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    morph(mask, &disk(radius), false)
}

/// Apply the requested cleanup.
pub fn clean_mask(mask: &Mask, morphology: Morphology) -> Mask {
    match morphology.radius() {
        None => mask.clone(),
        Some(r) => {
            let fp = disk(r);
            let opened = morph(&morph(mask, &fp, true), &fp, false);
            morph(&morph(&opened, &fp, false), &fp, true)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Inclusive bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.max_row - self.min_row + 1
    }

    pub fn width(&self) -> usize {
        self.max_col - self.min_col + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub label: u32,
    pub area: usize,
    /// `(row, col)` mean position.
    pub centroid: (f64, f64),
    pub bbox: BBox,
}

/// Label map (0 = background) and per-label statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSet {
    pub lines: usize,
    pub samples: usize,
    pub labels: Vec<u32>,
    pub regions: Vec<Region>,
}

impl RegionSet {
    pub fn label_at(&self, line: usize, sample: usize) -> u32 {
        self.labels[line * self.samples + sample]
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Region statistics for an existing label map with labels `1..=n`.
fn regions_from_labels(lines: usize, samples: usize, labels: Vec<u32>, n: usize) -> RegionSet {
    let mut acc: Vec<(usize, f64, f64, BBox)> = vec![
        (
            0,
            0.0,
            0.0,
            BBox {
                min_row: usize::MAX,
                min_col: usize::MAX,
                max_row: 0,
                max_col: 0,
            }
        );
        n
    ];
    for i in 0..lines {
        for j in 0..samples {
            let l = labels[i * samples + j];
            if l == 0 {
                continue;
            }
            let a = &mut acc[l as usize - 1];
            a.0 += 1;
            a.1 += i as f64;
            a.2 += j as f64;
            a.3.min_row = a.3.min_row.min(i);
            a.3.min_col = a.3.min_col.min(j);
            a.3.max_row = a.3.max_row.max(i);
            a.3.max_col = a.3.max_col.max(j);
        }
    }
    let regions = acc
        .into_iter()
        .enumerate()
        .map(|(k, (area, sr, sc, bbox))| Region {
            label: k as u32 + 1,
            area,
            centroid: (sr / area as f64, sc / area as f64),
            bbox,
        })
        .collect();
    RegionSet {
        lines,
        samples,
        labels,
        regions,
    }
}

/// Two-pass union-find labeling. Labels follow the row-major order of each
/// component's first pixel.
pub fn label_components(mask: &Mask, connectivity: Connectivity) -> RegionSet {
    let (h, w) = (mask.lines, mask.samples);
    let mut parent: Vec<usize> = (0..h * w).collect();
    // Previously visited neighbours: left, and for 8-connectivity the three above.
    let back: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(0, -1), (-1, 0)],
        Connectivity::Eight => &[(0, -1), (-1, -1), (-1, 0), (-1, 1)],
    };
    for i in 0..h {
        for j in 0..w {
            if !mask.get(i, j) {
                continue;
            }
            for &(dy, dx) in back {
                let (y, x) = (i as isize + dy, j as isize + dx);
                if y >= 0 && x >= 0 && (x as usize) < w && mask.get(y as usize, x as usize) {
                    union(&mut parent, i * w + j, y as usize * w + x as usize);
                }
            }
        }
    }
    let mut root_label = vec![0u32; h * w];
    let mut labels = vec![0u32; h * w];
    let mut n = 0u32;
    for (p, label) in labels.iter_mut().enumerate() {
        if !mask.bits[p] {
            continue;
        }
        let r = find(&mut parent, p);
        if root_label[r] == 0 {
            n += 1;
            root_label[r] = n;
        }
        *label = root_label[r];
    }
    regions_from_labels(h, w, labels, n as usize)
}

/// Drop regions with `area < min_area`; survivors are relabelled `1..=m` in order.
pub fn filter_min_area(rs: &RegionSet, min_area: usize) -> RegionSet {
    let mut remap = vec![0u32; rs.regions.len() + 1];
    let mut regions = Vec::new();
    for r in &rs.regions {
        if r.area >= min_area {
            let new = regions.len() as u32 + 1;
            remap[r.label as usize] = new;
            regions.push(Region {
                label: new,
                ..r.clone()
            });
        }
    }
    RegionSet {
        lines: rs.lines,
        samples: rs.samples,
        labels: rs.labels.iter().map(|&l| remap[l as usize]).collect(),
        regions,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropMode {
    /// Fixed `size x size` window centred on the region centroid.
    Square(usize),
    /// The region's bounding box.
    Tight,
}

impl Default for CropMode {
    fn default() -> Self {
        CropMode::Square(30)
    }
}

/// One cropped leaf and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafCrop {
    pub label: u32,
    pub cube: Hypercube,
    pub line0: usize,
    pub sample0: usize,
    pub warning: Option<String>,
}

/// Start and length of a `size` window centred at `center` within `[0, dim)`.
fn window(center: usize, size: usize, dim: usize) -> (usize, usize, bool) {
    if size >= dim {
        return (0, dim, size > dim);
    }
    let start = center.saturating_sub(size / 2).min(dim - size);
    (start, size, false)
}

/// Crop every region out of `cube`, in label order.
pub fn crop_regions(cube: &Hypercube, rs: &RegionSet, mode: CropMode) -> Vec<LeafCrop> {
    assert_eq!(
        (rs.lines, rs.samples),
        (cube.lines(), cube.samples()),
        "region map does not match cube"
    );
    rs.regions
        .iter()
        .map(|r| match mode {
            CropMode::Tight => LeafCrop {
                label: r.label,
                cube: cube.crop(
                    r.bbox.min_row,
                    r.bbox.min_col,
                    r.bbox.height(),
                    r.bbox.width(),
                ),
                line0: r.bbox.min_row,
                sample0: r.bbox.min_col,
                warning: None,
            },
            CropMode::Square(size) => {
                let size = size.max(1);
                let cr = r.centroid.0.round() as usize;
                let cc = r.centroid.1.round() as usize;
                let (l0, nl, clipped_l) = window(cr, size, cube.lines());
                let (s0, ns, clipped_s) = window(cc, size, cube.samples());
                let warning = (clipped_l || clipped_s).then(|| {
                    format!(
                        "leaf {}: crop size {size} exceeds image {}x{}, using {nl}x{ns}",
                        r.label,
                        cube.lines(),
                        cube.samples()
                    )
                });
                LeafCrop {
                    label: r.label,
                    cube: cube.crop(l0, s0, nl, ns),
                    line0: l0,
                    sample0: s0,
                    warning,
                }
            }
        })
        .collect()
}
