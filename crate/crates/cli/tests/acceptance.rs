//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::ffi::OsStr;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use leafhsi::augmentation::{
    apply_transform, augment_folder, stencil, AffineTransform, AugmentationSpec, DrawRecord,
    Interpolation,
};
use leafhsi::cube::{
    reflectance, spatial_bin, spectral_bin, subtract_dark, BinningParams, CubeError,
};
use leafhsi::envi::{
    self, parse_header, ByteOrder, DataType, EnviHeader, Interleave, WriteOptions,
};
use leafhsi::indices::{compute_index, BandIndices, BandSelection, IndexKind};
use leafhsi::matio::{parse_mat, read_mat_array, write_mat, MatArray};
use leafhsi::segmentation::{
    clip_cube, clip_folder, label_components, otsu_bin_boundary, ClipOptions, ClipParams,
    Connectivity, CropMode, Mask, CLIP_DIR,
};
use leafhsi::Hypercube;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{
    close, flood_fill, naive_spatial_bin, naive_spectral_bin, otsu_exhaustive,
    reference_bilinear_taps, reference_resample, reference_source,
};

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn io<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x5eed_0000 + tag)
}

fn within(start: Instant, limit: Duration, what: &str) -> Outcome {
    let took = start.elapsed();
    check!(took < limit, "{what} took {took:?}, limit {limit:?}");
    Ok(())
}

fn random_cube(
    r: &mut ChaCha8Rng,
    max_l: usize,
    max_s: usize,
    max_b: usize,
    lo: f64,
    hi: f64,
) -> Hypercube {
    let (l, s, b) = (
        r.random_range(1..=max_l),
        r.random_range(1..=max_s),
        r.random_range(1..=max_b),
    );
    let data = (0..l * s * b).map(|_| r.random_range(lo..hi)).collect();
    Hypercube::from_bsq(l, s, b, data).unwrap()
}

fn random_value(r: &mut ChaCha8Rng, dt: DataType) -> f64 {
    match dt {
        DataType::U8 => r.random::<u8>() as f64,
        DataType::I16 => r.random::<i16>() as f64,
        DataType::I32 => r.random::<i32>() as f64,
        DataType::U16 => r.random::<u16>() as f64,
        DataType::U32 => r.random::<u32>() as f64,
        DataType::F32 => loop {
            let v = f32::from_bits(r.random());
            if v.is_finite() {
                break v as f64;
            }
        },
        DataType::F64 => loop {
            let v = f64::from_bits(r.random());
            if v.is_finite() {
                break v;
            }
        },
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn format_round_trips() -> Outcome {
    let start = Instant::now();
    let dir = io(tempfile::tempdir())?;
    let mut r = rng(1);
    let reserved = [
        "samples",
        "lines",
        "bands",
        "data type",
        "interleave",
        "byte order",
        "header offset",
        "wavelength",
        "description",
    ];
    for case in 0..200 {
        let dt = DataType::ALL[case % 7];
        let il = Interleave::ALL[(case / 7) % 3];
        let order = if (case / 21) % 2 == 0 {
            ByteOrder::Little
        } else {
            ByteOrder::Big
        };
        let (l, s, b) = (
            r.random_range(1..=16),
            r.random_range(1..=16),
            r.random_range(1..=32),
        );
        let data = (0..l * s * b).map(|_| random_value(&mut r, dt)).collect();
        let mut cube = Hypercube::from_bsq(l, s, b, data).unwrap();
        if r.random_bool(0.5) {
            let wl = (0..b)
                .map(|k| 400.0 + k as f64 * r.random_range(0.5..20.0))
                .collect();
            cube.set_wavelengths(Some(wl)).unwrap();
        }
        let opts = WriteOptions::new(il, dt).byte_order(order);
        let base = dir.path().join(format!("c{case}"));
        let (hdr, _) = io(envi::write_cube_with(&cube, &base, &opts))?;
        let (h, back) = io(envi::read_envi(&hdr))?;
        check!(
            (h.interleave, h.data_type, h.byte_order) == (il, dt, order),
            "case {case}: header fields changed"
        );
        check!(
            bits(back.as_bsq()) == bits(cube.as_bsq()),
            "case {case}: {dt:?}/{il:?}/{order:?} values differ"
        );
        check!(
            back.wavelengths() == cube.wavelengths(),
            "case {case}: wavelengths differ"
        );

        let mut header = EnviHeader::new(l, s, b, il, dt);
        header.byte_order = order;
        header.header_offset = r.random_range(0..4) * 512;
        header.wavelengths = cube.wavelengths().map(<[f64]>::to_vec);
        if r.random_bool(0.5) {
            header.description = Some(format!("scene {case} capture"));
        }
        for k in 0..r.random_range(0..4) {
            let key = format!("field {k}");
            if !reserved.contains(&key.as_str()) {
                header.extra_fields.push((
                    key,
                    format!("{{{}, {}}}", r.random::<u16>(), r.random::<u8>()),
                ));
            }
        }
        header
            .extra_fields
            .push(("sensor type".into(), "Unknown".into()));
        let parsed = io(parse_header(&header.to_text()))?;
        check!(
            parsed == header,
            "case {case}: header text round-trip changed keys"
        );
    }
    within(start, Duration::from_secs(30), "200 ENVI round-trips")
}

fn mat_round_trips() -> Outcome {
    let start = Instant::now();
    let dir = io(tempfile::tempdir())?;
    let mut r = rng(2);
    for case in 0..100 {
        let rank = r.random_range(1..=3);
        let dims: Vec<usize> = (0..rank).map(|_| r.random_range(1..=8)).collect();
        let n = dims.iter().product();
        let values = (0..n)
            .map(|_| random_value(&mut r, DataType::F64))
            .collect();
        let arr = io(MatArray::new(format!("v{case}"), dims.clone(), values))?;
        let path = dir.path().join(format!("m{case}.mat"));
        io(write_mat(&path, std::slice::from_ref(&arr)))?;
        let back = io(read_mat_array(&path, &arr.name))?;
        let mut want = dims;
        if want.len() == 1 {
            want.push(1);
        }
        check!(
            back.dims == want,
            "case {case}: dims {:?} vs {want:?}",
            back.dims
        );
        check!(
            bits(&back.values) == bits(&arr.values),
            "case {case}: values differ"
        );
    }

    let fixture = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/reference_compressed.mat");
    let arrays = io(parse_mat(&io(fs::read(fixture))?))?;
    let find = |n: &str| {
        arrays
            .iter()
            .find(|a| a.name == n)
            .ok_or(format!("missing {n}"))
    };
    let cube = find("cube")?;
    check!(cube.dims == [2, 3, 4], "fixture cube dims {:?}", cube.dims);
    for i in 0..2 {
        for j in 0..3 {
            for k in 0..4 {
                let want = (i * 100 + j * 10 + k) as f64 + 0.5;
                check!(cube.get(&[i, j, k]) == want, "fixture cube[{i},{j},{k}]");
            }
        }
    }
    check!(
        find("single")?.values == [0.5, -1.25, 3.0],
        "fixture single"
    );
    check!(
        find("counts")?.values == [1.0, 400.0, -2.0, -500.0, 3.0, 600.0],
        "fixture counts"
    );
    check!(
        find("wavelength")?.values == [450.0, 500.0, 550.0, 600.0, 650.0],
        "fixture wavelength"
    );
    within(start, Duration::from_secs(10), "MAT round-trips")
}

fn calibration_math() -> Outcome {
    let mut r = rng(3);
    let raw = Hypercube::filled(4, 3, 5, 55.0).unwrap();
    let dark = Hypercube::filled(4, 3, 5, 10.0).unwrap();
    let white = Hypercube::filled(4, 3, 5, 100.0).unwrap();
    let refl = io(reflectance(&raw, &dark, &white))?;
    check!(
        refl.cube.as_bsq().iter().all(|v| (v - 0.5).abs() <= 1e-12),
        "reflectance is not 0.5"
    );

    check!(
        matches!(
            BinningParams::new(0, 3),
            Err(CubeError::InvalidBinFactor(0))
        ),
        "spectral k=0 accepted"
    );
    check!(
        matches!(
            BinningParams::new(3, 0),
            Err(CubeError::InvalidBinFactor(0))
        ),
        "spatial k=0 accepted"
    );
    check!(
        spectral_bin(&raw, 0).is_err() && spatial_bin(&raw, 0).is_err(),
        "k=0 binning accepted"
    );

    for case in 0..50 {
        let c = random_cube(&mut r, 12, 12, 24, 0.0, 4095.0);
        let zero = io(subtract_dark(&c, &c))?;
        check!(
            zero.cube.as_bsq().iter().all(|&v| v == 0.0),
            "case {case}: raw==dark not zero"
        );

        let k = r.random_range(1..=c.bands().min(4));
        let fast = io(spectral_bin(&c, k))?;
        for (i, row) in naive_spectral_bin(&c, k).iter().enumerate() {
            for (j, px) in row.iter().enumerate() {
                for (g, &v) in px.iter().enumerate() {
                    check!(
                        close(fast.get(i, j, g), v, 1e-12),
                        "case {case}: spectral bin k={k} at {i},{j},{g}"
                    );
                }
            }
        }
        let k = r.random_range(1..=c.lines().min(c.samples()).min(4));
        let fast = io(spatial_bin(&c, k))?;
        for (i, row) in naive_spatial_bin(&c, k).iter().enumerate() {
            for (j, px) in row.iter().enumerate() {
                for (b, &v) in px.iter().enumerate() {
                    check!(
                        close(fast.get(i, j, b), v, 1e-12),
                        "case {case}: spatial bin k={k} at {i},{j},{b}"
                    );
                }
            }
        }
    }
    Ok(())
}

const RGEN: BandSelection = BandSelection::ByIndex(BandIndices {
    red: 0,
    green: 1,
    red_edge: 2,
    nir: 3,
});

fn index_correctness() -> Outcome {
    let mut r = rng(4);
    for case in 0..1000 {
        let px: Vec<f64> = (0..4).map(|_| r.random_range(1e-3..1.0)).collect();
        let (red, green, re, nir) = (px[0], px[1], px[2], px[3]);
        let cube = Hypercube::from_bsq(1, 1, 4, px).unwrap();
        for (kind, want) in [
            (IndexKind::Ndvi, (nir - red) / (nir + red)),
            (IndexKind::Gci, nir / green - 1.0),
            (IndexKind::CiRedEdge, nir / re - 1.0),
        ] {
            let img = io(compute_index(&cube, kind, &RGEN))?;
            check!(img.valid[0], "case {case}: {kind} marked invalid");
            let got = img.values[0];
            check!(
                close(got, want, 1e-12) || (got - want).abs() <= 1e-12,
                "case {case}: {kind} {got} vs {want}"
            );
        }
    }

    let ndvi = |c: &Hypercube, nir: usize| {
        let sel = BandSelection::ByIndex(BandIndices {
            red: 1 - nir,
            green: 0,
            red_edge: 0,
            nir,
        });
        compute_index(c, IndexKind::Ndvi, &sel).map_err(|e| e.to_string())
    };
    for case in 0..50 {
        let mut c = random_cube(&mut r, 16, 16, 1, 1e-3, 1.0);
        let (l, s, _) = c.dims();
        let mut data = c.as_bsq().to_vec();
        data.extend((0..l * s).map(|_| r.random_range(1e-3..1.0)));
        c = Hypercube::from_bsq(l, s, 2, data).unwrap();
        let scale = r.random_range(1e-3..1e3);
        let scaled = c.map(|v| v * scale).unwrap();
        let (a, b, sc) = (ndvi(&c, 1)?, ndvi(&c, 0)?, ndvi(&scaled, 1)?);
        for p in 0..l * s {
            check!(
                (a.values[p] + b.values[p]).abs() <= 1e-12,
                "case {case}: antisymmetry at {p}"
            );
            check!(
                (a.values[p] - sc.values[p]).abs() <= 1e-12,
                "case {case}: scale {scale} at {p}"
            );
        }
    }
    Ok(())
}

fn otsu_oracle() -> Outcome {
    let mut r = rng(5);
    for case in 0..100 {
        let mut counts = vec![0u64; 256];
        if case % 2 == 0 {
            for c in counts.iter_mut() {
                if r.random_bool(0.7) {
                    *c = r.random_range(0..5000);
                }
            }
        } else {
            for _ in 0..r.random_range(2..8) {
                counts[r.random_range(0..256)] += r.random_range(1..1_000_000);
            }
        }
        let got = otsu_bin_boundary(&counts);
        let want = otsu_exhaustive(&counts);
        check!(
            got == want,
            "case {case}: boundary {got:?} vs oracle {want:?}"
        );
    }
    Ok(())
}

fn components_oracle() -> Outcome {
    let mut r = rng(6);
    for case in 0..200 {
        let (h, w) = (r.random_range(1..=16), r.random_range(1..=16));
        let p = r.random_range(0.2..0.8);
        let mask = Mask {
            lines: h,
            samples: w,
            bits: (0..h * w).map(|_| r.random_bool(p)).collect(),
        };
        for conn in [Connectivity::Four, Connectivity::Eight] {
            let rs = label_components(&mask, conn);
            let oracle = flood_fill(&mask, conn);
            check!(
                rs.regions.len() == oracle.len(),
                "case {case} {conn:?}: region count"
            );
            for (reg, (area, bb)) in rs.regions.iter().zip(&oracle) {
                check!(
                    reg.area == *area && reg.bbox == *bb,
                    "case {case} {conn:?}: region {}",
                    reg.label
                );
            }
        }
    }
    Ok(())
}

/// Red/NIR cube: two 12x12 leaves and a 3x3 speck on a noisy background.
fn two_leaves_and_speck() -> Hypercube {
    Hypercube::from_fn(48, 56, 2, |i, j, b| {
        let leaf = ((6..18).contains(&i) && (8..20).contains(&j))
            || ((28..40).contains(&i) && (34..46).contains(&j));
        let speck = (40..43).contains(&i) && (4..7).contains(&j);
        let noise = ((i * 31 + j * 17) % 7) as f64 * 0.002;
        match (leaf || speck, b) {
            (true, 0) => 0.06 + noise,
            (true, _) => 0.55 + noise,
            (false, 0) => 0.30 + noise,
            (false, _) => 0.33 - noise,
        }
    })
    .unwrap()
}

fn leaf_headers(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let mut v: Vec<PathBuf> = io(fs::read_dir(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension() == Some(OsStr::new("hdr")))
        .collect();
    v.sort();
    Ok(v)
}

fn end_to_end_clipping() -> Outcome {
    let start = Instant::now();
    let dir = io(tempfile::tempdir())?;
    let cube = two_leaves_and_speck()
        .with_wavelengths(vec![670.0, 800.0])
        .unwrap();
    io(envi::write_cube(
        &cube,
        &dir.path().join("plant_R"),
        Interleave::Bil,
        DataType::F64,
    ))?;

    let tight = ClipOptions {
        params: ClipParams {
            crop_mode: CropMode::Tight,
            ..ClipParams::default()
        },
        output_dir: Some(dir.path().join("tight")),
        ..ClipOptions::default()
    };
    let report = io(clip_folder(dir.path(), &tight))?;
    check!(!report.has_failures(), "clip failures: {:?}", report.inputs);
    let files = leaf_headers(&dir.path().join("tight"))?;
    check!(files.len() == 2, "expected 2 leaf files, found {files:?}");

    let sel = BandSelection::ByIndex(BandIndices {
        red: 0,
        green: 0,
        red_edge: 0,
        nir: 1,
    });
    let (seg, crops) = io(clip_cube(&cube, IndexKind::Ndvi, &sel, &tight.params))?;
    check!(crops.len() == 2, "expected 2 crops");
    for (crop, file) in crops.iter().zip(&files) {
        let (l, s, b) = crop.cube.dims();
        let bb = seg.regions.regions[crop.label as usize - 1].bbox;
        check!(
            (l, s) == (bb.height(), bb.width()),
            "tight crop is not the bbox"
        );
        for i in 0..l {
            for j in 0..s {
                for k in 0..b {
                    check!(
                        crop.cube.get(i, j, k) == cube.get(crop.line0 + i, crop.sample0 + j, k),
                        "leaf {} does not re-embed at ({i},{j},{k})",
                        crop.label
                    );
                }
            }
        }
        check!(
            io(envi::read_cube(file))?.as_bsq() == crop.cube.as_bsq(),
            "{file:?} differs from crop"
        );
    }

    for size in [20usize, 30] {
        let opts = ClipOptions {
            params: ClipParams {
                crop_mode: CropMode::Square(size),
                ..ClipParams::default()
            },
            output_dir: Some(dir.path().join(format!("sq{size}"))),
            ..ClipOptions::default()
        };
        io(clip_folder(dir.path(), &opts))?;
        let files = leaf_headers(&dir.path().join(format!("sq{size}")))?;
        check!(files.len() == 2, "square({size}): expected 2 leaf files");
        for f in files {
            let dims = io(envi::read_cube(&f))?.dims();
            check!(dims == (size, size, 2), "square({size}) gave {dims:?}");
        }
    }
    within(start, Duration::from_secs(5), "end-to-end clipping")
}

fn augmentation_invariants() -> Outcome {
    let mut r = rng(8);
    let cube_8x8x5 = |r: &mut ChaCha8Rng| {
        Hypercube::from_bsq(
            8,
            8,
            5,
            (0..320).map(|_| r.random_range(-100.0..100.0)).collect(),
        )
        .unwrap()
    };
    for case in 0..50 {
        let cube = cube_8x8x5(&mut r);
        for (h, v) in [(true, false), (false, true), (true, true)] {
            let d = DrawRecord {
                flip_horizontal: h,
                flip_vertical: v,
                ..DrawRecord::identity()
            };
            let t = AffineTransform::from_draw(&d, 8, 8);
            let once = apply_transform(&cube, &t, Interpolation::Nearest, 0.0);
            for i in 0..8 {
                for j in 0..8 {
                    let (si, sj) = (if v { 7 - i } else { i }, if h { 7 - j } else { j });
                    check!(
                        once.spectrum(i, j) == cube.spectrum(si, sj),
                        "case {case}: flip not a permutation"
                    );
                }
            }
            let twice = apply_transform(&once, &t, Interpolation::Nearest, 0.0);
            check!(
                twice.as_bsq() == cube.as_bsq(),
                "case {case}: flip ({h},{v}) not an involution"
            );
        }

        let d = DrawRecord {
            rotate_deg: r.random_range(-45.0..45.0),
            shear_deg: r.random_range(-30.0..30.0),
            flip_horizontal: r.random(),
            flip_vertical: r.random(),
        };
        let t = AffineTransform::from_draw(&d, 8, 8);
        let out = apply_transform(&cube, &t, Interpolation::Bilinear, 0.0);
        let reference = reference_resample(&cube, &d, 0.0);
        for (a, b) in out.as_bsq().iter().zip(&reference) {
            check!(
                (a - b).abs() < 1e-9,
                "case {case}: bilinear differs from reference resampler"
            );
        }
        for i in 0..8 {
            for j in 0..8 {
                let st = stencil(&t, Interpolation::Bilinear, 8, 8, i, j);
                let (sr, sc) = reference_source(&d, 8, 8, i, j);
                check!(
                    (st.len == 0) == reference_bilinear_taps(sr, sc, 8, 8).is_none(),
                    "case {case}: coverage differs at ({i},{j})"
                );
                check!(st.len <= 4, "more than 4 taps");
                if st.len == 0 {
                    continue;
                }
                let total: f64 = st.taps().iter().map(|t| t.2).sum();
                check!(
                    (total - 1.0).abs() < 1e-12,
                    "case {case}: weights sum to {total}"
                );
                check!(
                    st.taps().iter().all(|t| t.2 > 0.0),
                    "case {case}: non-positive weight"
                );
                for k in 0..5 {
                    let mix: f64 = st
                        .taps()
                        .iter()
                        .map(|&(a, b, w)| w * cube.get(a, b, k))
                        .sum();
                    check!(
                        out.get(i, j, k) == mix,
                        "case {case}: band {k} not the shared combination"
                    );
                }
            }
        }
    }

    let src = io(tempfile::tempdir())?;
    for n in 1..=2 {
        let c = cube_8x8x5(&mut r);
        io(envi::write_cube(
            &c,
            &src.path().join(format!("S_leaf_{n}")),
            Interleave::Bsq,
            DataType::F32,
        ))?;
    }
    let spec = AugmentationSpec {
        seed: Some(2024),
        ..AugmentationSpec::default()
    };
    let run = || -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        let out = io(tempfile::tempdir())?;
        io(augment_folder(src.path(), &spec, Some(out.path())))?;
        tree(out.path())
    };
    let (a, b) = (run()?, run()?);
    check!(
        a.len() == 12,
        "expected 12 augmented files, got {}",
        a.len()
    );
    check!(a == b, "seeded augmentation is not byte-identical");
    Ok(())
}

// Fixture dataset and CLI.

const BANDS: usize = 60;
const SIZE: usize = 90;

fn fixture_wavelengths() -> Vec<f64> {
    (0..BANDS).map(|k| 400.0 + k as f64 * 10.0).collect()
}

fn leaf_reflectance(nm: f64) -> f64 {
    let green = 0.08 * (-((nm - 550.0) / 30.0).powi(2)).exp();
    let edge = 0.45 / (1.0 + (-(nm - 715.0) / 12.0).exp());
    0.05 + green + edge
}

fn soil_reflectance(nm: f64) -> f64 {
    0.2 + 0.0002 * (nm - 400.0)
}

/// Leaf centres and radii for a plant scene.
fn leaves(shift: usize) -> [(f64, f64, f64); 3] {
    let s = shift as f64;
    [
        (20.0 + s, 20.0, 8.0),
        (22.0, 66.0 - s, 9.0),
        (66.0, 40.0 + s, 8.5),
    ]
}

fn scene(r: &mut ChaCha8Rng, shift: usize, gain: f64, offset: f64) -> Hypercube {
    let wl = fixture_wavelengths();
    let spots = leaves(shift);
    let noise: Vec<f64> = (0..SIZE * SIZE * BANDS)
        .map(|_| r.random_range(-0.01..0.01))
        .collect();
    Hypercube::from_fn(SIZE, SIZE, BANDS, |i, j, b| {
        let on_leaf = spots
            .iter()
            .any(|&(ci, cj, rad)| (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2) <= rad * rad);
        let refl = if on_leaf {
            leaf_reflectance(wl[b])
        } else {
            soil_reflectance(wl[b])
        };
        (offset + gain * (refl + noise[(b * SIZE + i) * SIZE + j]))
            .round()
            .max(0.0)
    })
    .unwrap()
    .with_wavelengths(wl)
    .unwrap()
}

fn dark(r: &mut ChaCha8Rng) -> Hypercube {
    let data = (0..SIZE * SIZE * BANDS)
        .map(|_| 100.0 + r.random_range(0..8) as f64)
        .collect();
    Hypercube::from_bsq(SIZE, SIZE, BANDS, data).unwrap()
}

/// `dataset/` with raw `_R`/`_F` captures, dark references and unsuffixed
/// reflectance scenes, plus `wavelengths.mat` beside it.
fn build_dataset(root: &Path) -> Result<(PathBuf, PathBuf), String> {
    let data = root.join("dataset");
    io(fs::create_dir_all(&data))?;
    let mut r = rng(9);
    let raw = WriteOptions::new(Interleave::Bil, DataType::U16);
    for (stem, shift) in [("H_P1_V4_B", 0), ("H_P1_V6_B", 3)] {
        for ch in ["R", "F"] {
            let c = scene(&mut r, shift, 3000.0, 108.0);
            io(envi::write_cube_with(
                &c,
                &data.join(format!("{stem}_{ch}")),
                &raw,
            ))?;
        }
        let spots = leaves(shift);
        let wl = fixture_wavelengths();
        let noise: Vec<f64> = (0..SIZE * SIZE * BANDS)
            .map(|_| r.random_range(-0.005..0.005))
            .collect();
        let refl = Hypercube::from_fn(SIZE, SIZE, BANDS, |i, j, b| {
            let on_leaf = spots.iter().any(|&(ci, cj, rad)| {
                (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2) <= rad * rad
            });
            let v = if on_leaf {
                leaf_reflectance(wl[b])
            } else {
                soil_reflectance(wl[b])
            };
            v + noise[(b * SIZE + i) * SIZE + j]
        })
        .unwrap()
        .with_wavelengths(wl)
        .unwrap();
        io(envi::write_cube_with(
            &refl,
            &data.join(stem),
            &WriteOptions::new(Interleave::Bsq, DataType::F32),
        ))?;
    }
    for ch in ["R", "F"] {
        io(envi::write_cube_with(
            &dark(&mut r),
            &data.join(format!("Dark_{ch}")),
            &raw,
        ))?;
    }
    let wl = root.join("wavelengths.mat");
    io(write_mat(
        &wl,
        &[io(MatArray::row_vector(
            "wavelength",
            fixture_wavelengths(),
        ))?],
    ))?;
    Ok((data, wl))
}

fn cli<I, S>(args: I) -> Result<Output, String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    io(Command::new(env!("CARGO_BIN_EXE_leafhsi"))
        .args(args)
        .output())
}

fn succeeded(what: &str, out: &Output) -> Outcome {
    check!(
        out.status.code() == Some(0),
        "{what} exited {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn p(path: &Path) -> &OsStr {
    path.as_os_str()
}

/// Calibration, clipping, augmentation and single-leaf plotting as in the
/// documented invocations.
fn run_pipeline(data: &Path, wl: &Path, seed: Option<u64>) -> Outcome {
    let out = cli([
        OsStr::new("calibration"),
        "folder".as_ref(),
        "--folder".as_ref(),
        p(data),
        "--dark".as_ref(),
        p(&data.join("Dark")),
        "--k".as_ref(),
        "3".as_ref(),
        "--spatial".as_ref(),
        "3".as_ref(),
    ])?;
    succeeded("calibration", &out)?;

    let out = cli([
        OsStr::new("clipping"),
        "folder".as_ref(),
        "--folder".as_ref(),
        p(data),
        "--index".as_ref(),
        "ndvi".as_ref(),
        "--wavelengths-mat".as_ref(),
        p(wl),
        "--threshold-mode".as_ref(),
        "auto".as_ref(),
        "--crop-mode".as_ref(),
        "square".as_ref(),
        "--crop-size".as_ref(),
        "30".as_ref(),
    ])?;
    succeeded("clipping", &out)?;

    let clipped = data.join(CLIP_DIR);
    let mut args: Vec<&OsStr> = vec![
        "augmentation".as_ref(),
        "folder".as_ref(),
        "--folder".as_ref(),
        p(&clipped),
        "--num".as_ref(),
        "3".as_ref(),
        "--flip".as_ref(),
        "--rotate".as_ref(),
        "-10".as_ref(),
        "10".as_ref(),
        "--shear".as_ref(),
        "-16".as_ref(),
        "16".as_ref(),
    ];
    let seed_text = seed.map(|s| s.to_string());
    if let Some(s) = &seed_text {
        args.extend([OsStr::new("--seed"), s.as_ref()]);
    }
    succeeded("augmentation", &cli(args)?)?;

    let out = cli([
        OsStr::new("plotting"),
        "leaf".as_ref(),
        "--clipped-dir".as_ref(),
        p(&clipped),
        "--stem".as_ref(),
        "H_P1_V4_B".as_ref(),
        "--leaf".as_ref(),
        "1".as_ref(),
        "3".as_ref(),
        "--wavelengths-mat".as_ref(),
        p(wl),
    ])?;
    succeeded("plotting", &out)
}

fn cli_parity() -> Outcome {
    let root = io(tempfile::tempdir())?;
    let (data, wl) = build_dataset(root.path())?;
    run_pipeline(&data, &wl, None)?;

    // calibration: one MAT per capture, binned 3x3 spatially and by 3 bands
    for stem in ["H_P1_V4_B", "H_P1_V6_B"] {
        for ch in ["R", "F"] {
            let mat = data.join(format!("{stem}_{ch}.mat"));
            let cube = io(read_mat_array(&mat, "cube"))?;
            check!(
                cube.dims == [SIZE / 3, SIZE / 3, BANDS / 3],
                "{mat:?} cube dims {:?}",
                cube.dims
            );
            let w = io(read_mat_array(&mat, "wavelength"))?;
            check!(
                w.dims == [1, BANDS / 3] && w.values[0] == 410.0,
                "{mat:?} wavelength {:?}",
                w.dims
            );
        }
    }
    let raw = io(envi::read_cube(&data.join("H_P1_V4_B_R.hdr")))?;
    let dark = io(envi::read_cube(&data.join("Dark_R.hdr")))?;
    let want = io(spatial_bin(
        &io(spectral_bin(&io(subtract_dark(&raw, &dark))?.cube, 3))?,
        3,
    ))?;
    let got = io(read_mat_array(&data.join("H_P1_V4_B_R.mat"), "cube"))?;
    for i in 0..SIZE / 3 {
        for j in 0..SIZE / 3 {
            for k in 0..BANDS / 3 {
                check!(
                    close(got.get(&[i, j, k]), want.get(i, j, k), 1e-12),
                    "calibrated value at {i},{j},{k}"
                );
            }
        }
    }

    // clipping: three 30x30 leaves per plant scene
    let clipped = data.join(CLIP_DIR);
    for stem in ["H_P1_V4_B", "H_P1_V6_B"] {
        for n in 1..=3 {
            let hdr = clipped.join(format!("{stem}_leaf_{n}.hdr"));
            let (h, c) = io(envi::read_envi(&hdr))?;
            check!(c.dims() == (30, 30, BANDS), "{hdr:?} dims {:?}", c.dims());
            check!(
                h.data_type == DataType::F32
                    && clipped.join(format!("{stem}_leaf_{n}.img")).exists(),
                "{hdr:?}"
            );
        }
        check!(
            !clipped.join(format!("{stem}_leaf_4.hdr")).exists(),
            "{stem}: extra leaf"
        );
    }

    // augmentation: three variants per clipped leaf
    let all = leaf_headers(&clipped)?;
    let originals: Vec<_> = all
        .iter()
        .filter(|h| !envi::stem_of(h).contains("_aug"))
        .collect();
    // three leaves in each of the six plant scenes, none in the dark references
    check!(originals.len() == 18, "leaf files: {originals:?}");
    check!(
        all.len() == originals.len() * 4,
        "{} headers for {} leaves",
        all.len(),
        originals.len()
    );
    for h in &originals {
        let stem = envi::stem_of(h);
        for k in 1..=3 {
            let aug = clipped.join(format!("{stem}_aug{k}.hdr"));
            check!(
                io(envi::read_cube(&aug))?.dims() == (30, 30, BANDS),
                "{aug:?}"
            );
        }
    }

    // plotting: chart plus CSV with one column per requested leaf
    let chart = clipped.join("H_P1_V4_B_center_spectra.svg");
    let svg = io(fs::read_to_string(&chart))?;
    check!(
        svg.starts_with("<svg") || svg.starts_with("<?xml"),
        "chart is not SVG"
    );
    check!(
        svg.contains("Wavelength (nm)"),
        "chart x axis is not wavelength"
    );
    let csv = io(fs::read_to_string(chart.with_extension("csv")))?;
    let mut lines = csv.lines();
    check!(
        lines.next() == Some("x,H_P1_V4_B leaf 1,H_P1_V4_B leaf 3"),
        "CSV header: {csv:.80}"
    );
    let rows: Vec<&str> = lines.collect();
    check!(
        rows.len() == BANDS && rows[0].starts_with("400,"),
        "CSV rows: {}",
        rows.len()
    );
    let leaf1 = io(envi::read_cube(&clipped.join("H_P1_V4_B_leaf_1.hdr")))?;
    let centre = leaf1.spectrum(15, 15);
    check!(
        rows[0].split(',').nth(1) == Some(centre[0].to_string().as_str()),
        "CSV leaf 1: {}",
        rows[0]
    );

    let out = cli([
        OsStr::new("plotting"),
        "leaf-multi".as_ref(),
        "--clipped-dir".as_ref(),
        p(&clipped),
        "--item".as_ref(),
        "H_P1_V4_B:1".as_ref(),
        "--item".as_ref(),
        "H_P1_V6_B:3".as_ref(),
        "--wavelengths-mat".as_ref(),
        p(&wl),
    ])?;
    succeeded("plotting leaf-multi", &out)?;
    check!(
        clipped.join("multi_spectra.svg").exists(),
        "multi chart missing"
    );

    let out = cli([
        OsStr::new("clipping"),
        "folder".as_ref(),
        "--folder".as_ref(),
        p(&data),
        "--threshold-mode".as_ref(),
        "manual".as_ref(),
    ])?;
    check!(
        out.status.code() == Some(2),
        "manual without threshold exited {:?}",
        out.status.code()
    );
    Ok(())
}

fn tree(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in io(fs::read_dir(&dir))? {
            let path = io(entry)?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, io(fs::read(&path))?);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let root = io(tempfile::tempdir())?;
        let (data, wl) = build_dataset(root.path())?;
        run_pipeline(&data, &wl, Some(7))?;
        runs.push(tree(root.path())?);
    }
    let (a, b) = (&runs[0], &runs[1]);
    check!(a.keys().eq(b.keys()), "runs produced different file sets");
    for (path, bytes) in a {
        check!(b[path] == *bytes, "{path:?} differs between runs");
    }
    check!(
        a.keys().any(|k| k.to_string_lossy().contains("_aug3")),
        "no augmented outputs"
    );
    Ok(())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("format round-trips", format_round_trips),
        ("MAT round-trips", mat_round_trips),
        ("calibration math", calibration_math),
        ("index correctness", index_correctness),
        ("Otsu oracle", otsu_oracle),
        ("components oracle", components_oracle),
        ("end-to-end clipping", end_to_end_clipping),
        ("augmentation invariants", augmentation_invariants),
        ("CLI parity", cli_parity),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("criterion {} ({name}): PASS [{secs:.2}s]", n + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.2}s] {e}", n + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
