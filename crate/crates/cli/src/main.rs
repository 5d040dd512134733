use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use markerloc::calibrate::{build_calibration, load_calibration, load_dataset, save_calibration};
use markerloc::estimate::{estimate_pose, Calibration, Envelopes, EstimateError, Interval};
use markerloc::harness::{curve_export, evaluate, CurveKind, ErrorReport};
use markerloc::raster::{load_ppm, save_ppm};
use markerloc::segment::{extract_features_with, ColorRanges, FeatureConfig, GapMetric};
use markerloc::synthcam::{
    add_noise, render, render_sweep, CameraSpec, MarkerSpec, NoiseSpec, ScenePose, SweepGrid,
};

/// Estimate range, bearing and heading of a striped cylindrical marker from
/// camera frames, and render synthetic frames to calibrate against.
#[derive(Debug, Parser)]
#[command(name = "markerloc", version)]
struct Cli {
    /// Seed for all noise injection.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a single frame.
    Render(RenderArgs),
    /// Render every pose of a grid plus a manifest.
    RenderSweep(SweepArgs),
    /// Fit a calibration from a rendered or recorded sweep.
    Calibrate(CalibrateArgs),
    /// Estimate the pose in one frame and print it as JSON.
    Detect(DetectArgs),
    /// Score a calibration on a held-out sweep.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct SceneArgs {
    /// Camera parameters as JSON; missing fields take defaults.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Marker geometry and colors as JSON; missing fields take defaults.
    #[arg(long)]
    marker: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Forward distance to the marker surface, cm.
    #[arg(long)]
    dv: f64,
    /// Lateral offset, cm, positive to the right.
    #[arg(long, allow_negative_numbers = true)]
    dh: f64,
    /// Heading, degrees.
    #[arg(long, allow_negative_numbers = true)]
    psi: f64,
    #[arg(long)]
    out: PathBuf,
    /// Gaussian noise sigma in channel units.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Fraction of pixels replaced by salt or pepper.
    #[arg(long, default_value_t = 0.0)]
    salt_pepper: f64,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Grid JSON with `dv`, `dh`, `psi` lists and optional `noise`.
    #[arg(long)]
    grid: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Vertical,
    Euclidean,
}

#[derive(Debug, Args)]
struct FeatureArgs {
    /// Color ranges as a JSON array; replaces the defaults.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    median_window: usize,
    /// Regions with fewer pixels count as missing.
    #[arg(long, default_value_t = 20)]
    min_area: u64,
    #[arg(long, value_enum, default_value_t = Metric::Vertical)]
    gap_metric: Metric,
}

#[derive(Debug, Args)]
struct EnvelopeArgs {
    /// Forward distance window for range and bearing, cm (lo:hi).
    #[arg(long)]
    envelope_range: Option<Interval>,
    /// Lateral offset window for bearing, cm (lo:hi).
    #[arg(long)]
    envelope_bearing: Option<Interval>,
    /// Forward distance window for heading, cm (lo:hi).
    #[arg(long)]
    envelope_heading: Option<Interval>,
    /// Heading dead zone, degrees, half-open (lo:hi).
    #[arg(long)]
    dead_zone: Option<Interval>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Directory holding frames and manifest.csv.
    #[arg(long)]
    data: PathBuf,
    /// Calibration JSON to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    envelopes: EnvelopeArgs,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    envelopes: EnvelopeArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory holding frames and manifest.csv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Also write the report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// What to print on standard output.
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Curves to export: range_law, k1k2, lateral_k.
    #[arg(long, value_delimiter = ',', value_parser = parse_curve)]
    curves: Vec<CurveKind>,
    /// Where curve CSV and SVG files go; defaults to the data directory.
    #[arg(long)]
    curves_dir: Option<PathBuf>,
    /// Exit with status 3 when a mean error exceeds its bound.
    #[arg(long)]
    assert: bool,
    #[arg(long, default_value_t = 1.0)]
    max_range_pct: f64,
    #[arg(long, default_value_t = 5.0)]
    max_bearing_pct: f64,
    #[arg(long, default_value_t = 5.0)]
    max_heading_pct: f64,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    envelopes: EnvelopeArgs,
}

fn parse_curve(s: &str) -> Result<CurveKind, String> {
    s.parse()
        .map_err(|e: markerloc::harness::HarnessError| e.to_string())
}

enum Failure {
    Data(anyhow::Error),
    Assertion(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl SceneArgs {
    fn load(&self) -> Result<(CameraSpec, MarkerSpec)> {
        let cam = match &self.camera {
            Some(p) => read_json(p)?,
            None => CameraSpec::default(),
        };
        let spec = match &self.marker {
            Some(p) => read_json(p)?,
            None => MarkerSpec::default(),
        };
        Ok((cam, spec))
    }
}

impl FeatureArgs {
    fn config(&self) -> Result<FeatureConfig> {
        let ranges = match &self.thresholds {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ColorRanges::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ColorRanges::default(),
        };
        if self.median_window.is_multiple_of(2) {
            bail!("--median-window must be odd, got {}", self.median_window);
        }
        Ok(FeatureConfig {
            ranges,
            min_area: self.min_area,
            median_window: self.median_window,
            gap_metric: match self.gap_metric {
                Metric::Vertical => GapMetric::Vertical,
                Metric::Euclidean => GapMetric::Euclidean,
            },
            ..FeatureConfig::default()
        })
    }
}

impl EnvelopeArgs {
    fn apply(&self, mut env: Envelopes) -> Envelopes {
        if let Some(iv) = self.envelope_range {
            env.range_dv_cm = iv;
        }
        if let Some(iv) = self.envelope_bearing {
            env.bearing_dh_cm = iv;
        }
        if let Some(iv) = self.envelope_heading {
            env.heading_dv_cm = iv;
        }
        if let Some(iv) = self.dead_zone {
            env.heading_dead_zone_deg = iv;
        }
        env
    }

    fn load_calibration(&self, path: &Path) -> Result<Calibration> {
        let mut calib = load_calibration(path)?;
        calib.envelopes = self.apply(calib.envelopes);
        Ok(calib)
    }
}

fn cmd_render(args: &RenderArgs, seed: u64) -> Result<()> {
    let (cam, spec) = args.scene.load()?;
    let pose = ScenePose::new(args.dv, args.dh, args.psi);
    let mut img = render(&pose, &cam, &spec)?;
    if args.noise_sigma > 0.0 || args.salt_pepper > 0.0 {
        img = add_noise(&img, args.noise_sigma, args.salt_pepper, seed);
    }
    save_ppm(&img, &args.out)?;
    eprintln!("wrote 1 frame to {}", args.out.display());
    Ok(())
}

fn cmd_render_sweep(args: &SweepArgs, seed: u64) -> Result<()> {
    let (cam, spec) = args.scene.load()?;
    let text = fs::read_to_string(&args.grid)
        .with_context(|| format!("reading {}", args.grid.display()))?;
    let mut grid = SweepGrid::from_json(&text)?;
    grid.noise = grid.noise.map(|n| NoiseSpec { seed, ..n });
    let rows = render_sweep(&grid, &cam, &spec, &args.out)?;
    eprintln!("wrote {} frames to {}", rows.len(), args.out.display());
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let cfg = args.features.config()?;
    let envelopes = args.envelopes.apply(Envelopes::default());
    let samples = load_dataset(&args.data, &cfg)?;
    let fit = build_calibration(&samples, &envelopes)?;
    save_calibration(&fit.calibration, &args.out)?;
    print!("{}", fit.table());
    eprintln!("wrote calibration to {}", args.out.display());
    Ok(())
}

fn cmd_detect(args: &DetectArgs) -> Result<()> {
    let cfg = args.features.config()?;
    let calib = args.envelopes.load_calibration(&args.calib)?;
    let img = load_ppm(&args.image)?;
    let features = extract_features_with(&img, &cfg);
    let est = estimate_pose(&features, &calib).map_err(|e| match e {
        EstimateError::MarkerNotFound(_) => {
            anyhow::Error::new(e).context(format!("no marker in {}", args.image.display()))
        }
        other => other.into(),
    })?;
    println!("{}", serde_json::to_string_pretty(&est)?);
    Ok(())
}

fn exceeded(name: &str, mean: Option<f64>, bound: f64) -> Option<String> {
    match mean {
        Some(m) if m > bound => Some(format!("{name} mean error {m:.3}% exceeds {bound}%")),
        None => Some(format!("{name} has no valid samples")),
        _ => None,
    }
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    let cfg = args.features.config()?;
    let calib = args.envelopes.load_calibration(&args.calib)?;
    let samples = load_dataset(&args.data, &cfg).map_err(anyhow::Error::from)?;
    let report: ErrorReport = evaluate(&calib, &samples).map_err(anyhow::Error::from)?;
    let json = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
    if let Some(path) = &args.report {
        fs::write(path, format!("{json}\n"))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    match args.format {
        Format::Table => print!("{}", report.to_table()),
        Format::Json => println!("{json}"),
    }
    let curves_dir = args.curves_dir.as_deref().unwrap_or(&args.data);
    for &kind in &args.curves {
        let csv = curves_dir.join(format!("{}.csv", kind.name()));
        let svg = curves_dir.join(format!("{}.svg", kind.name()));
        curve_export(&samples, &calib, kind, &csv, &svg).map_err(anyhow::Error::from)?;
        eprintln!("wrote {} and {}", csv.display(), svg.display());
    }
    if args.assert {
        let failures: Vec<String> = [
            exceeded("range", report.range.mean_pct_error, args.max_range_pct),
            exceeded(
                "bearing",
                report.bearing.mean_pct_error,
                args.max_bearing_pct,
            ),
            exceeded(
                "heading",
                report.heading.mean_pct_error,
                args.max_heading_pct,
            ),
        ]
        .into_iter()
        .flatten()
        .collect();
        if !failures.is_empty() {
            return Err(Failure::Assertion(failures.join("; ")));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Render(a) => cmd_render(a, cli.seed)?,
        Command::RenderSweep(a) => cmd_render_sweep(a, cli.seed)?,
        Command::Calibrate(a) => cmd_calibrate(a)?,
        Command::Detect(a) => cmd_detect(a)?,
        Command::Evaluate(a) => cmd_evaluate(a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Assertion(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(3)
        }
    }
}
