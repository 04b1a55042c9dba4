use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use leafhsi::augmentation::{augment_folder, AugmentationSpec, Interpolation};
use leafhsi::calibration::{calibrate_folder, CalibrationJob};
use leafhsi::cube::BinningParams;
use leafhsi::envi;
use leafhsi::indices::{BandIndices, BandSelection, IndexKind};
use leafhsi::report::{InputReport, StageReport, Status};
use leafhsi::segmentation::{clip_folder, ClipOptions, ClipParams, CropMode, ThresholdMode};
use leafhsi::spectra::{
    parse_item, pixel_spectrum, plot_leaf_center, plot_leaf_multi, plot_spectra, roi_mean_spectrum,
    LeafPlot, MultiPlot, PlotOutput, Roi, WavelengthSource,
};
use leafhsi::wavelengths::load_wavelengths;

#[derive(Parser)]
#[command(
    name = "leafhsi",
    version,
    about = "Leaf-level hyperspectral preprocessing: calibration, clipping, augmentation and spectral plots"
)]
struct Cli {
    /// Write a JSON report of the run to this path
    #[arg(long, global = true, value_name = "P", value_parser = path_arg)]
    report: Option<PathBuf>,
    /// Worker threads for per-file work (default: logical cores)
    #[arg(long, global = true, value_name = "INT", value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    #[command(subcommand)]
    stage: Stage,
}

#[derive(Subcommand)]
enum Stage {
    /// Dark-correct and bin raw `_R`/`_F` cubes into `.mat` files
    Calibration {
        #[command(subcommand)]
        cmd: CalibrationCmd,
    },
    /// Segment leaves by vegetation index and write one cube per leaf
    Clipping {
        #[command(subcommand)]
        cmd: ClippingCmd,
    },
    /// Write randomly rotated, sheared and flipped copies of leaf cubes
    Augmentation {
        #[command(subcommand)]
        cmd: AugmentationCmd,
    },
    /// Plot spectra of clipped leaves to SVG with a CSV sidecar
    Plotting {
        #[command(subcommand)]
        cmd: PlottingCmd,
    },
}

#[derive(Subcommand)]
enum CalibrationCmd {
    /// Calibrate every `<stem>_R` / `<stem>_F` cube in a folder
    Folder(CalibrationArgs),
}

#[derive(Args)]
struct CalibrationArgs {
    #[arg(long, value_name = "P", value_parser = path_arg)]
    folder: PathBuf,
    /// Dark reference prefix; `<dark>_R.hdr` and `<dark>_F.hdr` must exist
    #[arg(long, value_name = "D", value_parser = path_arg)]
    dark: PathBuf,
    /// Spectral bin factor
    #[arg(long, value_name = "INT", default_value_t = 3)]
    k: usize,
    /// Spatial bin factor
    #[arg(long, value_name = "INT", default_value_t = 3)]
    spatial: usize,
    /// Output folder (default: the input folder)
    #[arg(long, value_name = "P", value_parser = path_arg)]
    outdir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ClippingCmd {
    /// Clip leaves from every ENVI cube in a folder
    Folder(ClippingArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdArg {
    Auto,
    Manual,
}

#[derive(Clone, Copy, ValueEnum)]
enum CropArg {
    Square,
    Tight,
}

#[derive(Args)]
struct WavelengthArgs {
    /// MAT file holding a `wavelength` vector
    #[arg(long, value_name = "P", value_parser = path_arg, conflicts_with = "wavelengths_csv")]
    wavelengths_mat: Option<PathBuf>,
    /// One-column CSV of wavelengths
    #[arg(long, value_name = "P", value_parser = path_arg)]
    wavelengths_csv: Option<PathBuf>,
}

impl WavelengthArgs {
    fn file(&self) -> Option<&Path> {
        self.wavelengths_mat
            .as_deref()
            .or(self.wavelengths_csv.as_deref())
    }

    fn source(&self) -> WavelengthSource {
        match self.file() {
            Some(p) => WavelengthSource::File(p.to_path_buf()),
            None => WavelengthSource::BandIndex,
        }
    }
}

#[derive(Args)]
struct ClippingArgs {
    #[arg(long, value_name = "P", value_parser = path_arg)]
    folder: PathBuf,
    /// Vegetation index: ndvi, gci or cire
    #[arg(long, value_name = "INDEX", value_parser = parse_index, default_value = "ndvi")]
    index: IndexKind,
    #[command(flatten)]
    wavelengths: WavelengthArgs,
    /// Explicit zero-based band indices instead of wavelength lookup
    #[arg(
        long,
        value_name = "R,G,RE,NIR",
        value_parser = parse_bands,
        conflicts_with_all = ["wavelengths_mat", "wavelengths_csv"]
    )]
    bands: Option<BandIndices>,
    #[arg(long, value_enum, default_value = "auto")]
    threshold_mode: ThresholdArg,
    /// Index threshold, required with `--threshold-mode manual`
    #[arg(
        long,
        value_name = "REAL",
        allow_negative_numbers = true,
        required_if_eq("threshold_mode", "manual")
    )]
    threshold: Option<f64>,
    #[arg(long, value_name = "INT", default_value_t = 100)]
    min_area: usize,
    #[arg(long, value_enum, default_value = "square")]
    crop_mode: CropArg,
    #[arg(long, value_name = "INT", default_value_t = 30, value_parser = clap::value_parser!(u32).range(1..))]
    crop_size: u32,
    /// Output folder (default: `<folder>/clipped_hypercubes`)
    #[arg(long, value_name = "P", value_parser = path_arg)]
    outdir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AugmentationCmd {
    /// Augment every ENVI leaf cube in a folder
    Folder(AugmentationArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpArg {
    Nearest,
    Bilinear,
}

#[derive(Args)]
struct AugmentationArgs {
    #[arg(long, value_name = "P", value_parser = path_arg)]
    folder: PathBuf,
    /// Variants per input cube
    #[arg(long, value_name = "INT", default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    num: u32,
    /// Randomly flip each axis with probability 0.5
    #[arg(long)]
    flip: bool,
    /// Rotation range in degrees
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [-10.0, 10.0])]
    rotate: Vec<f64>,
    /// Shear range in degrees, along the sample axis
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [-16.0, 16.0])]
    shear: Vec<f64>,
    /// Seed for reproducible draws
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "bilinear")]
    interpolation: InterpArg,
    /// Value for pixels mapped from outside the source
    #[arg(
        long,
        value_name = "REAL",
        default_value_t = 0.0,
        allow_negative_numbers = true
    )]
    fill: f64,
    /// Output folder (default: the input folder)
    #[arg(long, value_name = "P", value_parser = path_arg)]
    outdir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PlottingCmd {
    /// Center-pixel spectra of several leaves of one sample
    Leaf(LeafArgs),
    /// Center-pixel spectra of leaves from several samples
    LeafMulti(LeafMultiArgs),
    /// Spectra at chosen pixels or rectangle means of one cube
    Pixel(PixelArgs),
}

#[derive(Args)]
struct LeafArgs {
    #[arg(long, value_name = "P", value_parser = path_arg)]
    clipped_dir: PathBuf,
    #[arg(long, value_name = "S")]
    stem: String,
    #[arg(long, value_name = "N", num_args = 1.., required = true)]
    leaf: Vec<usize>,
    #[command(flatten)]
    wavelengths: WavelengthArgs,
    #[arg(long, value_name = "T")]
    title: Option<String>,
    /// Chart path; the CSV goes next to it
    #[arg(long, value_name = "P", value_parser = path_arg)]
    out: Option<PathBuf>,
    /// Accepted for compatibility; charts are always written to file
    #[arg(long)]
    show: bool,
}

#[derive(Args)]
struct LeafMultiArgs {
    #[arg(long, value_name = "P", value_parser = path_arg)]
    clipped_dir: PathBuf,
    /// STEM:LEAF, repeatable
    #[arg(long, value_name = "STEM:LEAF", required = true)]
    item: Vec<String>,
    #[command(flatten)]
    wavelengths: WavelengthArgs,
    #[arg(long, value_name = "T")]
    title: Option<String>,
    #[arg(long, value_name = "P", value_parser = path_arg)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PixelArgs {
    /// ENVI header of the cube
    #[arg(long, value_name = "P", value_parser = path_arg)]
    cube: PathBuf,
    /// Pixel position, repeatable
    #[arg(long, num_args = 2, value_names = ["ROW", "COL"], action = clap::ArgAction::Append)]
    pixel: Vec<usize>,
    /// Inclusive rectangle whose mean spectrum is plotted, repeatable
    #[arg(long, num_args = 4, value_names = ["ROW0", "COL0", "ROW1", "COL1"], action = clap::ArgAction::Append)]
    roi: Vec<usize>,
    #[command(flatten)]
    wavelengths: WavelengthArgs,
    #[arg(long, value_name = "T")]
    title: Option<String>,
    /// Default: `<cube stem>_pixel_spectra.svg` next to the cube
    #[arg(long, value_name = "P", value_parser = path_arg)]
    out: Option<PathBuf>,
}

/// Accept either separator style.
fn path_arg(s: &str) -> Result<PathBuf, String> {
    if s.is_empty() {
        return Err("empty path".into());
    }
    if cfg!(windows) {
        Ok(PathBuf::from(s))
    } else {
        Ok(PathBuf::from(s.replace('\\', "/")))
    }
}

fn parse_index(s: &str) -> Result<IndexKind, String> {
    s.parse()
}

fn parse_bands(s: &str) -> Result<BandIndices, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad band index `{p}`"))
        })
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [red, green, red_edge, nir] => Ok(BandIndices {
            red,
            green,
            red_edge,
            nir,
        }),
        _ => Err(format!(
            "expected four comma-separated indices, got {}",
            parts.len()
        )),
    }
}

fn status_text(r: &InputReport) -> String {
    let mut s = match r.status {
        Status::Success => "ok".to_string(),
        Status::NoRegions => "no regions".to_string(),
        Status::Failed => format!("FAILED: {}", r.error.as_deref().unwrap_or("unknown error")),
    };
    if let Some(t) = r.threshold {
        s.push_str(&format!(", threshold {t:.6}"));
    }
    if let Some(n) = r.leaf_count {
        s.push_str(&format!(", {n} leaves"));
    }
    if let Some(n) = r.invalid_pixels {
        if n > 0 {
            s.push_str(&format!(", {n} clamped values"));
        }
    }
    if !r.outputs.is_empty() {
        s.push_str(&format!(", {} files written", r.outputs.len()));
    }
    s
}

fn print_report(report: &StageReport) {
    for w in &report.warnings {
        eprintln!("warning: {}: {w}", report.stage);
    }
    for r in &report.inputs {
        println!(
            "[{}] {}: {}",
            report.stage,
            r.path.display(),
            status_text(r)
        );
        for w in &r.warnings {
            eprintln!("warning: {}: {}: {w}", report.stage, r.path.display());
        }
    }
}

fn calibration(a: CalibrationArgs) -> Result<StageReport> {
    let params = BinningParams::new(a.k, a.spatial)?;
    let job = CalibrationJob {
        params,
        output_dir: a.outdir,
        ..CalibrationJob::new(a.folder, a.dark)
    };
    Ok(calibrate_folder(&job)?)
}

fn clipping(a: ClippingArgs) -> Result<StageReport> {
    let wavelengths = match a.wavelengths.file() {
        Some(p) => Some(load_wavelengths(p)?),
        None => None,
    };
    let selection = match a.bands {
        Some(ix) => BandSelection::ByIndex(ix),
        None => BandSelection::default(),
    };
    let threshold_mode = match (a.threshold_mode, a.threshold) {
        (ThresholdArg::Manual, Some(t)) => ThresholdMode::Manual(t),
        (ThresholdArg::Manual, None) => {
            bail!("--threshold is required with --threshold-mode manual")
        }
        (ThresholdArg::Auto, _) => ThresholdMode::Auto,
    };
    let crop_mode = match a.crop_mode {
        CropArg::Square => CropMode::Square(a.crop_size as usize),
        CropArg::Tight => CropMode::Tight,
    };
    let opts = ClipOptions {
        index: a.index,
        selection,
        wavelengths,
        params: ClipParams {
            threshold_mode,
            min_area: a.min_area,
            crop_mode,
            ..ClipParams::default()
        },
        output_dir: a.outdir,
    };
    Ok(clip_folder(&a.folder, &opts)?)
}

fn augmentation(a: AugmentationArgs) -> Result<StageReport> {
    let spec = AugmentationSpec {
        num_aug: a.num as usize,
        flip: a.flip,
        rotate_deg: (a.rotate[0], a.rotate[1]),
        shear_deg: (a.shear[0], a.shear[1]),
        seed: a.seed,
        interpolation: match a.interpolation {
            InterpArg::Nearest => Interpolation::Nearest,
            InterpArg::Bilinear => Interpolation::Bilinear,
        },
        fill_value: a.fill,
    };
    Ok(augment_folder(&a.folder, &spec, a.outdir.as_deref())?)
}

fn plot_report(input: PathBuf, out: PlotOutput) -> StageReport {
    StageReport {
        inputs: vec![InputReport {
            warnings: out.warnings,
            ..InputReport::success(input, vec![out.chart, out.csv])
        }],
        ..StageReport::new("plotting")
    }
}

fn plotting(cmd: PlottingCmd) -> Result<StageReport> {
    match cmd {
        PlottingCmd::Leaf(a) => {
            let req = LeafPlot {
                clipped_dir: a.clipped_dir.clone(),
                stem: a.stem,
                leaves: a.leaf,
                wavelengths: a.wavelengths.source(),
                title: a.title,
                out: a.out,
                show: a.show,
            };
            Ok(plot_report(a.clipped_dir, plot_leaf_center(&req)?))
        }
        PlottingCmd::LeafMulti(a) => {
            let items = a
                .item
                .iter()
                .map(|s| parse_item(s))
                .collect::<Result<Vec<_>, _>>()?;
            let req = MultiPlot {
                clipped_dir: a.clipped_dir.clone(),
                items,
                wavelengths: a.wavelengths.source(),
                title: a.title,
                out: a.out,
            };
            Ok(plot_report(a.clipped_dir, plot_leaf_multi(&req)?))
        }
        PlottingCmd::Pixel(a) => {
            if a.pixel.is_empty() && a.roi.is_empty() {
                bail!("give at least one --pixel or --roi");
            }
            let header = envi::header_path(&a.cube);
            let mut cube = envi::read_cube(&header)?;
            let mut warnings = Vec::new();
            if let Some(p) = a.wavelengths.file() {
                let wl = load_wavelengths(p)?;
                if wl.len() == cube.bands() {
                    cube.set_wavelengths(Some(wl))?;
                } else {
                    warnings.push(format!(
                        "{} wavelengths for {} bands, using band indices",
                        wl.len(),
                        cube.bands()
                    ));
                    cube.set_wavelengths(None)?;
                }
            } else {
                cube.set_wavelengths(None)?;
            }
            let mut series = Vec::new();
            for p in a.pixel.chunks(2) {
                series.push(pixel_spectrum(&cube, p[0], p[1])?);
            }
            for r in a.roi.chunks(4) {
                let roi = Roi {
                    min_row: r[0],
                    min_col: r[1],
                    max_row: r[2],
                    max_col: r[3],
                };
                series.push(roi_mean_spectrum(&cube, roi)?);
            }
            let stem = envi::stem_of(&header);
            let chart = a.out.unwrap_or_else(|| {
                header
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join(format!("{stem}_pixel_spectra.svg"))
            });
            let title = a.title.unwrap_or_else(|| format!("{stem} pixel spectra"));
            let mut out = plot_spectra(&series, &title, &chart)?;
            warnings.append(&mut out.warnings);
            out.warnings = warnings;
            Ok(plot_report(header, out))
        }
    }
}

fn run(cli: Cli) -> Result<StageReport> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .context("cannot start worker pool")?;
    }
    match cli.stage {
        Stage::Calibration {
            cmd: CalibrationCmd::Folder(a),
        } => calibration(a).context("calibration"),
        Stage::Clipping {
            cmd: ClippingCmd::Folder(a),
        } => clipping(a).context("clipping"),
        Stage::Augmentation {
            cmd: AugmentationCmd::Folder(a),
        } => augmentation(a).context("augmentation"),
        Stage::Plotting { cmd } => plotting(cmd).context("plotting"),
    }
}

fn write_json(path: &Path, report: &StageReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write report {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report_path = cli.report.clone();
    match run(cli) {
        Ok(report) => {
            print_report(&report);
            if let Some(p) = &report_path {
                if let Err(e) = write_json(p, &report) {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(1);
                }
            }
            if report.has_failures() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
