//! `voxmi` command-line tool.
//!
//! Exit codes: 0 success, 1 input error (I/O, format, bad arguments),
//! 2 no overlap between the scans or the optimizer hit its iteration cap.
//! Pose literals are `"tx ty tz rx ry rz"` in meters and degrees; JSON
//! reports carry radians.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use voxmi::align::{linspace, Aligner, PoseAxis};
use voxmi::bench::{
    kitti_cases, run_benchmark, synth_scene, synthetic_cases, write_summary_csv, write_trials_csv,
    PerturbationSpec, SceneSpec, DEFAULT_SENSOR_RANGE,
};
use voxmi::geometry::{euler_to_transform, transform_to_euler};
use voxmi::mi::BinningSpec;
use voxmi::optim::SimplexConfig;
use voxmi::scan_io::{load_cloud, parse_kitti_pose_line, save_cloud, CloudFormat};
use voxmi::{AlignmentConfig, EulerPose, Execution, FeatureKind, GridSpec, PointCloud};

/// Environment variable naming a directory for the log file.
const LOG_DIR_ENV: &str = "VOXMI_LOG_DIR";

#[derive(Parser, Debug)]
#[command(name = "voxmi", version, about = "Scan registration by voxelized mutual information")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Align SOURCE onto TARGET and write a JSON report.
    Align {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        opts: AlignOpts,
        /// Report path (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optimizer trace path (CSV).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// MI along one pose axis with the others held at --init.
    Sweep {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        opts: AlignOpts,
        #[arg(long)]
        axis: PoseAxis,
        /// LO,HI in meters, or degrees for rx/ry/rz.
        #[arg(long, allow_hyphen_values = true)]
        range: String,
        #[arg(long, default_value_t = 41)]
        steps: usize,
        /// CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the joint feature histogram at --init.
    Histogram {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        opts: AlignOpts,
        /// CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic scene.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 50_000)]
        points: usize,
        #[arg(long, default_value_t = 40)]
        structures: usize,
        #[arg(long, default_value_t = 80.0)]
        extent: f64,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        /// Output path; format from extension unless --format is given.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<CloudFormat>,
    },
    /// Perturbation study on synthetic scenes or a KITTI-style sequence.
    Benchmark {
        /// Planar translation magnitudes in meters, comma separated.
        #[arg(long, value_delimiter = ',')]
        tmags: Vec<f64>,
        /// Yaw magnitudes in degrees, comma separated.
        #[arg(long, value_delimiter = ',')]
        rmags: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory receiving trials.csv and summary.csv.
        #[arg(long)]
        out: PathBuf,
        /// Number of synthetic scenes (seeds 1..=N).
        #[arg(long, default_value_t = 10)]
        scenes: u64,
        #[arg(long, default_value_t = 50_000)]
        points: usize,
        #[arg(long, default_value_t = 40)]
        structures: usize,
        /// Sensor range of synthetic scans, meters.
        #[arg(long, default_value_t = DEFAULT_SENSOR_RANGE)]
        sensor_range: f64,
        /// Directory of KITTI `.bin` scans; requires --poses.
        #[arg(long, requires = "poses")]
        kitti_dir: Option<PathBuf>,
        /// KITTI pose file matching --kitti-dir.
        #[arg(long, requires = "kitti_dir")]
        poses: Option<PathBuf>,
        /// Scan index gap between the two scans of a pair.
        #[arg(long, default_value_t = 1)]
        pair_offset: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 100)]
        max_pairs: usize,
        #[arg(long, value_enum, default_value_t = FeatureArg::Varz)]
        feature: FeatureArg,
    },
}

#[derive(Args, Debug)]
struct PairArgs {
    /// Scan to move (B).
    source: PathBuf,
    /// Reference scan (A).
    target: PathBuf,
    /// Input format for both scans; inferred from the extension by default.
    #[arg(long)]
    format: Option<CloudFormat>,
}

#[derive(Args, Debug)]
struct AlignOpts {
    /// Initial pose "tx ty tz rx ry rz" (meters, degrees), or a file holding
    /// such a line or a 12-value KITTI pose row.
    #[arg(long, default_value = "0 0 0 0 0 0", allow_hyphen_values = true)]
    init: String,
    #[arg(long, value_enum, default_value_t = FeatureArg::Varz)]
    feature: FeatureArg,
    /// Voxel edge length in meters.
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    /// Occupied-value bins.
    #[arg(long, default_value_t = 32)]
    bins: usize,
    /// Upper clamp of the feature; defaults to 2 for varz and 64 for count.
    #[arg(long)]
    clamp: Option<f64>,
    /// Initial simplex steps "sx sy sz sroll spitch syaw" (meters, radians).
    #[arg(long, allow_hyphen_values = true)]
    simplex: Option<String>,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    phi: Switch,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    #[arg(long)]
    serial: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FeatureArg {
    Varz,
    Count,
}

impl From<FeatureArg> for FeatureKind {
    fn from(f: FeatureArg) -> Self {
        match f {
            FeatureArg::Varz => FeatureKind::VarZ,
            FeatureArg::Count => FeatureKind::Count,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Switch {
    On,
    Off,
}

/// Exit status for a failed run.
fn failure_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<voxmi::Error>() {
        Some(voxmi::Error::NoOverlap | voxmi::Error::EmptyOverlap) => 2,
        _ => 1,
    }
}

/// Error chain joined with ": ", skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn parse_numbers(s: &str) -> Option<Vec<f64>> {
    s.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().ok())
        .collect()
}

fn pose_from_degrees(v: &[f64]) -> EulerPose {
    EulerPose::new(v[0], v[1], v[2], v[3].to_radians(), v[4].to_radians(), v[5].to_radians())
}

fn parse_init(spec: &str) -> anyhow::Result<EulerPose> {
    if let Some(v) = parse_numbers(spec) {
        if v.len() == 6 {
            return Ok(pose_from_degrees(&v));
        }
        bail!("--init needs 6 values (tx ty tz rx ry rz), got {}", v.len());
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).with_context(|| format!("reading initial pose {}", path.display()))?;
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .with_context(|| format!("{}: no pose line", path.display()))?;
    match parse_numbers(line).map(|v| v.len()) {
        Some(6) => Ok(pose_from_degrees(&parse_numbers(line).unwrap())),
        Some(12) => {
            let t = parse_kitti_pose_line(line, path, 1)?;
            Ok(transform_to_euler(&t)?)
        }
        _ => bail!("{}: expected 6 pose values or a 12-value KITTI row", path.display()),
    }
}

impl AlignOpts {
    fn config(&self) -> anyhow::Result<AlignmentConfig> {
        let kind: FeatureKind = self.feature.into();
        let defaults = BinningSpec::default_for(kind);
        let binning = BinningSpec::new(kind, self.bins, self.clamp.unwrap_or(defaults.upper_clamp))?;
        let mut simplex = SimplexConfig {
            max_iterations: self.max_iter,
            restarts: self.restarts,
            ..SimplexConfig::default()
        };
        if let Some(s) = &self.simplex {
            let v = parse_numbers(s).context("--simplex needs 6 numbers")?;
            simplex.initial_steps = v
                .try_into()
                .map_err(|v: Vec<f64>| anyhow::anyhow!("--simplex needs 6 values, got {}", v.len()))?;
        }
        let cfg = AlignmentConfig {
            grid: GridSpec::with_resolution(self.resolution)?,
            binning,
            feature: kind,
            simplex,
            phi_enabled: self.phi == Switch::On,
            execution: if self.serial { Execution::Serial } else { Execution::Parallel },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_pair(pair: &PairArgs) -> anyhow::Result<(PointCloud, PointCloud)> {
    let b = load_cloud(&pair.source, pair.format)?;
    let a = load_cloud(&pair.target, pair.format)?;
    log::info!("source {} points, target {} points", b.len(), a.len());
    Ok((a, b))
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_align(
    pair: &PairArgs,
    opts: &AlignOpts,
    out: Option<&Path>,
    trace: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let cfg = opts.config()?;
    let init = parse_init(&opts.init)?;
    let (a, b) = load_pair(pair)?;
    let report = voxmi::align(&a, &b, &euler_to_transform(&init)?, &cfg)?;
    if let Some(p) = out {
        let mut w = output(Some(p))?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        writeln!(w)?;
    }
    if let Some(p) = trace {
        let mut w = output(Some(p))?;
        writeln!(w, "iteration,best_mi,spread")?;
        for t in &report.trace {
            writeln!(w, "{},{},{}", t.iteration, t.best, t.spread)?;
        }
    }
    let p = report.estimated_pose;
    println!(
        "pose (m, deg): {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        p.tx,
        p.ty,
        p.tz,
        p.rx.to_degrees(),
        p.ry.to_degrees(),
        p.rz.to_degrees()
    );
    println!("final MI: {:.9} nats ({} iterations, {:?})", report.final_mi, report.iterations, report.termination);
    if report.converged() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("warning: optimizer stopped at the iteration cap without converging");
        Ok(ExitCode::from(2))
    }
}

fn parse_range(s: &str) -> anyhow::Result<(f64, f64)> {
    match parse_numbers(s).as_deref() {
        Some(&[lo, hi]) if lo <= hi => Ok((lo, hi)),
        _ => bail!("--range must be LO,HI with LO <= HI, got '{s}'"),
    }
}

fn cmd_sweep(
    pair: &PairArgs,
    opts: &AlignOpts,
    axis: PoseAxis,
    range: &str,
    steps: usize,
    out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let cfg = opts.config()?;
    let init = parse_init(&opts.init)?;
    let (lo, hi) = parse_range(range)?;
    if steps == 0 {
        bail!("--steps must be at least 1");
    }
    let (a, b) = load_pair(pair)?;
    let aligner = Aligner::new(&a, &b, &cfg)?;
    let shown = linspace(lo, hi, steps);
    let values: Vec<f64> = if axis.is_rotation() {
        shown.iter().map(|v| v.to_radians()).collect()
    } else {
        shown.clone()
    };
    let samples = aligner.sweep(&init, axis, &values);
    if samples.iter().all(|s| s.mi.is_none()) {
        return Err(voxmi::Error::NoOverlap.into());
    }
    let mut w = output(out)?;
    writeln!(w, "value,mi")?;
    for (v, s) in shown.iter().zip(&samples) {
        match s.mi {
            Some(m) => writeln!(w, "{v},{}", m.mi)?,
            None => writeln!(w, "{v},")?,
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_histogram(pair: &PairArgs, opts: &AlignOpts, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let mut cfg = opts.config()?;
    let omit_phi = !cfg.phi_enabled;
    cfg.phi_enabled = true;
    let init = parse_init(&opts.init)?;
    let (a, b) = load_pair(pair)?;
    let eval = Aligner::new(&a, &b, &cfg)?.evaluate(&init)?;
    let mut w = output(out)?;
    eval.histogram.write_csv(&cfg.binning, omit_phi, &mut w)?;
    w.flush()?;
    if let Some(r) = eval.histogram.occupied_correlation() {
        log::info!("occupied-bin correlation {r:.4}, MI {:.6} nats", eval.mi.mi);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(spec: &SceneSpec, out: &Path, format: Option<CloudFormat>) -> anyhow::Result<ExitCode> {
    let cloud = synth_scene(spec)?;
    save_cloud(out, &cloud, format.or(Some(CloudFormat::from_path(out).unwrap_or(CloudFormat::XyzText))))?;
    log::info!("wrote {} points to {}", cloud.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_benchmark(cmd: &Command) -> anyhow::Result<ExitCode> {
    let Command::Benchmark {
        tmags,
        rmags,
        trials,
        jobs,
        seed,
        out,
        scenes,
        points,
        structures,
        sensor_range,
        kitti_dir,
        poses,
        pair_offset,
        stride,
        max_pairs,
        feature,
    } = cmd
    else {
        unreachable!()
    };
    let pert = PerturbationSpec {
        translation_magnitudes: tmags.clone(),
        rotation_magnitudes: rmags.clone(),
        trials_per_magnitude: *trials,
        seed: *seed,
    };
    let classes = pert.classes()?;
    let cases = if classes.is_empty() {
        Vec::new()
    } else if let (Some(dir), Some(poses)) = (kitti_dir, poses) {
        kitti_cases(dir, poses, *stride, *pair_offset, *max_pairs)?
    } else {
        let base = SceneSpec {
            n_points: *points,
            n_structures: *structures,
            ..SceneSpec::default()
        };
        let seeds: Vec<u64> = (1..=*scenes).collect();
        synthetic_cases(&base, &seeds, *sensor_range)?
    };
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cfg = AlignmentConfig::for_feature((*feature).into());
    let records = run_benchmark(&cases, &pert, &cfg, jobs)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_trials_csv(&records, output(Some(&out.join("trials.csv")))?)?;
    write_summary_csv(&records, output(Some(&out.join("summary.csv")))?)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    println!("{} trials over {} pairs written to {} ({failed} failed)", records.len(), cases.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn init_logging(verbose: u8) -> anyhow::Result<()> {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let mut builder = env_logger::Builder::new();
    builder.filter_level(level).parse_default_env();
    if let Some(dir) = std::env::var_os(LOG_DIR_ENV) {
        let dir = PathBuf::from(dir);
        fs::create_dir_all(&dir).with_context(|| format!("creating log directory {}", dir.display()))?;
        let file = File::options()
            .create(true)
            .append(true)
            .open(dir.join("voxmi.log"))
            .with_context(|| format!("opening log file in {}", dir.display()))?;
        builder.target(env_logger::Target::Pipe(Box::new(file)));
    }
    builder.try_init()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    init_logging(cli.verbose)?;
    match &cli.command {
        Command::Align { pair, opts, out, trace } => cmd_align(pair, opts, out.as_deref(), trace.as_deref()),
        Command::Sweep { pair, opts, axis, range, steps, out } => {
            cmd_sweep(pair, opts, *axis, range, *steps, out.as_deref())
        }
        Command::Histogram { pair, opts, out } => cmd_histogram(pair, opts, out.as_deref()),
        Command::Synth { seed, points, structures, extent, noise, out, format } => {
            let spec = SceneSpec {
                seed: *seed,
                extent: *extent,
                n_points: *points,
                n_structures: *structures,
                noise_sigma: *noise,
            };
            cmd_synth(&spec, out, *format)
        }
        cmd @ Command::Benchmark { .. } => cmd_benchmark(cmd),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(failure_code(&e))
        }
    }
}
