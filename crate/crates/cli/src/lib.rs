//! Subcommands behind the `fidforce` binary.
//!
//! Each `cmd_*` function takes parsed arguments, writes its artifacts, and
//! returns the text it wants on stdout. Failures carry a [`ErrorKind`] that
//! maps to the process exit code.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fiducial_force::analysis::{sensitivity_report_at, AnalysisError, DEFAULT_FORCE_RANGES_N, DEFAULT_THETA_DEG};
use fiducial_force::calibration::CalibrationModel;
use fiducial_force::io::{self, GeometryConfig, IoError};
use fiducial_force::pipeline::{self, PipelineError, PipelineOptions, DEFAULT_ALPHA, DEFAULT_MAX_LAG_S};
use fiducial_force::rig::{generate_dataset, measure_fps, DatasetRequest, FrameSourceSpec, Rig, RigError, TrajectorySpec};
use fiducial_force::signal::SignalError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Schema,
    Numeric,
    UnreliableLag,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Schema => 2,
            ErrorKind::Numeric => 3,
            ErrorKind::UnreliableLag => 4,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ErrorKind::Schema => "schema",
            ErrorKind::Numeric => "numeric",
            ErrorKind::UnreliableLag => "unreliable_lag",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn schema(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Schema, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Numeric, message: message.into() }
    }
}

/// `error code=<tag>: <message>` on one line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat = self.message.replace(['\n', '\r'], " ");
        write!(f, "error code={}: {}", self.kind.tag(), flat)
    }
}

impl std::error::Error for CliError {}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::schema(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let kind = match &e {
            PipelineError::Signal(SignalError::UnreliableLag { .. } | SignalError::InsufficientOverlap { .. }) => {
                ErrorKind::UnreliableLag
            }
            PipelineError::NoDetections | PipelineError::NoTruth | PipelineError::ModelMetadata(_) => ErrorKind::Schema,
            PipelineError::InvalidAlpha(_) => ErrorKind::Schema,
            _ => ErrorKind::Numeric,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<RigError> for CliError {
    fn from(e: RigError) -> Self {
        let kind = match &e {
            RigError::Singular { .. } | RigError::NoToggles { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Schema,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::schema(e.to_string())
    }
}

/// Run settings shared by the subcommands. Unset fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Geometry JSON, relative to the config file.
    pub geometry_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub cam_fps: f64,
    pub truth_fps: f64,
    pub lag_s: f64,
    pub jitter_fraction: f64,
    pub alpha: f64,
    pub max_lag_s: f64,
    pub trajectory: TrajectorySpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let req = DatasetRequest::default();
        Self {
            geometry_path: None,
            seed: None,
            cam_fps: req.cam_fps,
            truth_fps: req.truth_fps,
            lag_s: req.lag_s,
            jitter_fraction: req.jitter_fraction,
            alpha: DEFAULT_ALPHA,
            max_lag_s: DEFAULT_MAX_LAG_S,
            trajectory: TrajectorySpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads the config and resolves `geometry_path` against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = io::read_json_file(path)?;
        if let Some(g) = &cfg.geometry_path {
            if g.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.geometry_path = Some(base.join(g));
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[derive(Debug, Parser)]
#[command(name = "fidforce", version, about = "Fiducial-based six-axis force-torque sensing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic truth.csv and detections.csv from a rig simulation
    Simulate(SimulateArgs),
    /// Fit a calibration model from detections and truth
    Calibrate(CalibrateArgs),
    /// Score a model on detections and truth, writing scatter data
    Evaluate(EvaluateArgs),
    /// Closed-form resolution and sensitivity report
    Analyze(AnalyzeArgs),
    /// Measure effective frame rate of a simulated buffered camera
    Bandwidth(BandwidthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run config JSON
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Geometry JSON; overrides the config's geometry_path
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_lag_s: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Full force span in newtons; repeatable
    #[arg(long = "force-range")]
    pub force_ranges: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_THETA_DEG)]
    pub theta_deg: f64,
}

#[derive(Debug, Clone, Args)]
pub struct BandwidthArgs {
    /// Frame source JSON
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub true_fps: Option<f64>,
    #[arg(long)]
    pub buffer_depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10.0)]
    pub timeout_s: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn load_geometry(common: &Common, cfg: &RunConfig) -> Result<GeometryConfig, CliError> {
    match common.geometry.as_deref().or(cfg.geometry_path.as_deref()) {
        Some(p) => Ok(GeometryConfig::load(p)?),
        None => Ok(GeometryConfig::default()),
    }
}

fn geometry_origin(common: &Common, cfg: &RunConfig) -> String {
    common
        .geometry
        .as_deref()
        .or(cfg.geometry_path.as_deref())
        .map_or_else(|| "default geometry".to_string(), |p| p.display().to_string())
}

fn load_rig(common: &Common, cfg: &RunConfig) -> Result<(GeometryConfig, Rig), CliError> {
    let g = load_geometry(common, cfg)?;
    let rig = g.rig(&geometry_origin(common, cfg))?;
    Ok((g, rig))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::schema(format!("{}: {e}", dir.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub frames: usize,
    pub detection_rows: usize,
    pub truth_rows: usize,
    pub dropouts: usize,
    pub duration_s: f64,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let cfg = RunConfig::load_or_default(args.common.config.as_deref())?;
    let seed = args
        .seed
        .or(cfg.seed)
        .ok_or_else(|| CliError::schema("simulate needs a seed (--seed or config `seed`)"))?;
    let (geometry, rig) = load_rig(&args.common, &cfg)?;
    let traj = cfg.trajectory.build(seed)?;
    let req = DatasetRequest {
        cam_fps: cfg.cam_fps,
        truth_fps: cfg.truth_fps,
        lag_s: cfg.lag_s,
        jitter_fraction: cfg.jitter_fraction,
        quantization: geometry.quantization,
        seed,
    };
    let ds = generate_dataset(&rig, &traj, &req)?;
    let out = &args.common.out_dir;
    ensure_dir(out)?;
    io::write_truth_file(&out.join("truth.csv"), &ds.truth)?;
    io::write_detections_file(&out.join("detections.csv"), &ds.detections)?;
    let summary = SimulationSummary {
        seed,
        frames: ds.frame_times.len(),
        detection_rows: ds.detections.len(),
        truth_rows: ds.truth.len(),
        dropouts: ds.dropouts.len(),
        duration_s: traj.end() - traj.start(),
    };
    io::write_json_file(&out.join("simulation.json"), &summary)?;
    Ok(format!(
        "simulated {:.3} s: {} frames, {} detection rows, {} truth rows, {} dropouts\n",
        summary.duration_s, summary.frames, summary.detection_rows, summary.truth_rows, summary.dropouts
    ))
}

fn axis_table(title: &str, values: &[f64; 6]) -> String {
    let mut s = format!("{title:<10}");
    for (name, v) in fiducial_force::dof::AXIS_NAMES_WRENCH.iter().zip(values) {
        s.push_str(&format!(" {name}={v:.6}"));
    }
    s.push('\n');
    s
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<String, CliError> {
    let cfg = RunConfig::load_or_default(args.common.config.as_deref())?;
    let (_, rig) = load_rig(&args.common, &cfg)?;
    let detections = io::read_detections_file(&args.detections)?;
    let truth = io::read_truth_file(&args.truth)?;
    let opts = PipelineOptions {
        alpha: args.alpha.unwrap_or(cfg.alpha),
        max_lag_s: args.max_lag_s.unwrap_or(cfg.max_lag_s),
    };
    let cal = pipeline::calibrate(&rig, &detections, &truth, &opts)?;
    let out = &args.common.out_dir;
    ensure_dir(out)?;
    io::write_json_file(&out.join("model.json"), &cal.model)?;
    io::write_json_file(&out.join("calibration_report.json"), &cal.report)?;
    let r = &cal.report;
    let mut s = format!(
        "frames {} solved {} failed {} degraded {}; {} samples fit\n",
        r.frames.frames, r.frames.solved, r.frames.failed, r.frames.degraded, r.samples
    );
    s.push_str(&format!(
        "alignment lag {:.4} s on {} (peak correlation {:.4}); condition number {:.3e}\n",
        r.lag.lag_s, r.lag_axis, r.lag.peak_correlation, r.condition_number
    ));
    s.push_str(&axis_table("R2 train", &r.r_squared.to_array()));
    Ok(s)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String, CliError> {
    let cfg = RunConfig::load_or_default(args.common.config.as_deref())?;
    let (_, rig) = load_rig(&args.common, &cfg)?;
    let model: CalibrationModel = io::read_json_file(&args.model)?;
    let detections = io::read_detections_file(&args.detections)?;
    let truth = io::read_truth_file(&args.truth)?;
    let ev = pipeline::evaluate(&model, &rig, &detections, &truth)?;
    let out = &args.common.out_dir;
    ensure_dir(out)?;
    io::write_json_file(&out.join("evaluation.json"), &ev.report)?;
    for (axis, name) in fiducial_force::dof::AXIS_NAMES_WRENCH.iter().enumerate() {
        let path = out.join(format!("scatter_{name}.csv"));
        let mut text = String::from("truth,predicted\n");
        for (t, p) in ev.truth.iter().zip(&ev.predicted) {
            text.push_str(&format!("{},{}\n", t.to_array()[axis], p.to_array()[axis]));
        }
        std::fs::write(&path, text).map_err(|e| CliError::schema(format!("{}: {e}", path.display())))?;
    }
    let mut s = format!("{} samples, lag {:.4} s, alpha {}\n", ev.report.samples, ev.report.lag_s, ev.report.alpha);
    s.push_str(&axis_table("R2", &ev.report.r_squared.to_array()));
    s.push_str(&axis_table("RMSE", &ev.report.rmse.to_array()));
    Ok(s)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<String, CliError> {
    let cfg = RunConfig::load_or_default(args.common.config.as_deref())?;
    let geometry = load_geometry(&args.common, &cfg)?;
    let ranges = if args.force_ranges.is_empty() { DEFAULT_FORCE_RANGES_N.to_vec() } else { args.force_ranges.clone() };
    let report = sensitivity_report_at(&geometry.analysis, &ranges, args.theta_deg)?;
    let out = &args.common.out_dir;
    ensure_dir(out)?;
    let path = out.join("sensitivity_report.json");
    io::write_json_file(&path, &report)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::numeric(e.to_string()))?;
    Ok(format!("{report}\n{json}\n"))
}

pub fn cmd_bandwidth(args: &BandwidthArgs) -> Result<String, CliError> {
    let mut spec: FrameSourceSpec = match &args.spec {
        Some(p) => io::read_json_file(p)?,
        None => FrameSourceSpec::default(),
    };
    if let Some(f) = args.true_fps {
        spec.true_fps = f;
    }
    if let Some(b) = args.buffer_depth {
        spec.buffer_depth = b;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let m = measure_fps(&spec, args.timeout_s)?;
    ensure_dir(&args.out_dir)?;
    #[derive(Serialize)]
    struct Out<'a> {
        source: &'a FrameSourceSpec,
        timeout_s: f64,
        measurement: fiducial_force::rig::FpsMeasurement,
    }
    io::write_json_file(&args.out_dir.join("bandwidth.json"), &Out { source: &spec, timeout_s: args.timeout_s, measurement: m })?;
    Ok(format!(
        "true {:.3} fps, buffer depth {}: measured {:.3} fps over {} toggles (naive read rate {:.1}/s)\n",
        spec.true_fps, spec.buffer_depth, m.fps, m.toggles, m.naive_read_rate
    ))
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Bandwidth(a) => cmd_bandwidth(a),
    }
}
