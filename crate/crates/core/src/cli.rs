//! The `ibflow` command-line front end.
//!
//! Every command resolves its settings as defaults, then an optional
//! `--config` file, then explicit flags, and writes the resolved settings to
//! `run.json` in the output directory. Passing that `run.json` back through
//! `--config` reproduces the run.
//!
//! Exit codes: 0 on success, 1 on runtime or numerical failure, 2 on usage
//! errors (including violated preconditions such as `|rho| >= 1`).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::effdim::{d_eff, normalize_spectrum, SpectralMeasure, DEFAULT_REL_FLOOR};
use crate::flownib::{
    delta_ablation, run_flownib, traces_from_jsonl, traces_to_jsonl, ydim_ablation, EncoderMode,
    FlowNibConfig, LayerTrace, RepresentationSet,
};
use crate::infoplane::{mic_summary, plane_rows, rows_to_csv, rows_to_jsonl, MicScore, DEFAULT_WINDOW};
use crate::linalg::pca_spectrum;
use crate::mi::{to_bits, train_mi_critic, MIPairBatch, MineConfig};
use crate::reps::{
    compare_bidir_seed, gen_gaussian_pair, load_representation_dump, spectral_suite,
    read_csv_matrix, summarize_bidir, BidirConfig, RegressionTask, SyntheticTask,
};
use crate::scheduler::DecrementMode;
use crate::{Error, Result};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "ibflow", version, about = "Information-bottleneck diagnostics for layer representations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a critic and report a mutual-information lower bound.
    MiEstimate(MiEstimateArgs),
    /// Effective dimensionality of a CSV matrix or of every matrix in a dump.
    Effdim(EffdimArgs),
    /// Dynamic information-bottleneck training.
    #[command(subcommand)]
    Flownib(FlownibCommand),
    /// Information-plane tables.
    #[command(subcommand)]
    Infoplane(InfoplaneCommand),
    /// Compare forward-only and bidirectional toy encoders.
    CompareBidir(CompareBidirArgs),
    /// Sweep one setting of the bottleneck training.
    Ablate(AblateArgs),
}

#[derive(Debug, Subcommand)]
pub enum FlownibCommand {
    Run(FlownibRunArgs),
}

#[derive(Debug, Subcommand)]
pub enum InfoplaneCommand {
    Export(InfoplaneExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Settings file: a previous run.json or a bare config object.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SyntheticKind {
    Gaussian,
    Independent,
    SignBit,
    GaussianChain,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MiPair {
    Xz,
    Zy,
    Xy,
}

#[derive(Debug, Args)]
pub struct MiEstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Representation dump manifest.
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticKind>,
    /// Which pair to estimate from a dump.
    #[arg(long, value_enum)]
    pub pair: Option<MiPair>,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also report the estimate in bits.
    #[arg(long)]
    pub bits: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiSource {
    Gaussian { n: usize, d: usize, rho: f64 },
    Dump { manifest: PathBuf, pair: MiPair, layer: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiEstimateConfig {
    pub source: MiSource,
    pub mine: MineConfig,
    pub bits: bool,
}

impl Default for MiEstimateConfig {
    fn default() -> Self {
        MiEstimateConfig {
            source: MiSource::Gaussian {
                n: 20_000,
                d: 1,
                rho: 0.9,
            },
            mine: MineConfig::default(),
            bits: false,
        }
    }
}

#[derive(Debug, Args)]
pub struct EffdimArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// A single CSV matrix.
    #[arg(long, conflicts_with = "manifest")]
    pub input: Option<PathBuf>,
    /// A representation dump; every matrix in it is measured.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub measure: Option<SpectralMeasure>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EffdimConfig {
    pub input: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub measure: SpectralMeasure,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Representation dump manifest.
    #[arg(long, conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticKind>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Layer count for synthetic chains and regression tasks.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Output dimension of the synthetic regression task.
    #[arg(long)]
    pub d_y: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub floor: Option<f64>,
    /// Decrement alpha once per epoch instead of once per step.
    #[arg(long)]
    pub per_epoch: bool,
    #[arg(long)]
    pub measure: Option<SpectralMeasure>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train a linear map on top of each layer.
    #[arg(long)]
    pub linear_encoder: bool,
    #[arg(long)]
    pub encoder_lr: Option<f64>,
    /// Encoder channel noise, relative to the per-dimension signal scale.
    #[arg(long)]
    pub encoder_noise: Option<f64>,
    /// Critic-only steps before the first epoch.
    #[arg(long)]
    pub critic_warmup: Option<usize>,
    /// Train each critic on its own unweighted bound.
    #[arg(long)]
    pub decoupled: bool,
}

#[derive(Debug, Args)]
pub struct FlownibRunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Manifest(PathBuf),
    Synthetic(SyntheticTask),
}

impl DataSource {
    fn load(&self, seed: u64) -> Result<RepresentationSet> {
        match self {
            DataSource::Manifest(p) => load_representation_dump(p),
            DataSource::Synthetic(t) => t.generate(seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlownibRunConfig {
    pub data: DataSource,
    pub flownib: FlowNibConfig,
}

impl Default for FlownibRunConfig {
    fn default() -> Self {
        FlownibRunConfig {
            data: DataSource::Synthetic(SyntheticTask::GaussianChain {
                n: 4000,
                d: 2,
                layers: 2,
                rho: 0.8,
            }),
            flownib: FlowNibConfig::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct InfoplaneExportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// A trace.jsonl written by `flownib run`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Added to x per successive layer.
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
    /// Export normalized instead of raw values.
    #[arg(long)]
    pub normalized: bool,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum)]
    pub mic: Option<MicKind>,
    #[arg(long)]
    pub bits: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MicKind {
    Min,
    Harmonic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfoplaneConfig {
    pub trace: PathBuf,
    pub offset: f64,
    pub normalized: bool,
    pub window: usize,
    pub mic: MicScore,
    pub bits: bool,
}

impl Default for InfoplaneConfig {
    fn default() -> Self {
        InfoplaneConfig {
            trace: PathBuf::from("trace.jsonl"),
            offset: 0.0,
            normalized: false,
            window: DEFAULT_WINDOW,
            mic: MicScore::Min,
            bits: false,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareBidirArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub seed_start: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub len: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Critic steps for the input-side estimates.
    #[arg(long)]
    pub steps_x: Option<usize>,
    /// Critic steps for the label-side estimates.
    #[arg(long)]
    pub steps_y: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Number of randomized spectral comparisons.
    #[arg(long)]
    pub spectral_draws: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareBidirConfig {
    pub seeds: usize,
    pub seed_start: u64,
    pub spectral_draws: usize,
    pub bidir: BidirConfig,
}

impl Default for CompareBidirConfig {
    fn default() -> Self {
        CompareBidirConfig {
            seeds: 20,
            seed_start: 0,
            spectral_draws: 100,
            bidir: BidirConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AblateParam {
    Delta,
    Ydim,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub param: Option<AblateParam>,
    /// Comma-separated values of the swept setting.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub values: Option<Vec<f64>>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Input dimension of the regression task used by `--param ydim`.
    #[arg(long)]
    pub d_x: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    pub param: AblateParam,
    pub values: Vec<f64>,
    /// Data for the delta sweep.
    pub data: DataSource,
    /// Base task for the output-dimension sweep; its `d_y` is overridden.
    pub task: RegressionTask,
    pub flownib: FlowNibConfig,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            param: AblateParam::Delta,
            values: vec![1e-1, 1e-3, 1e-6],
            data: FlownibRunConfig::default().data,
            task: RegressionTask::default(),
            flownib: FlowNibConfig::default(),
        }
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Errors are reported on stderr.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `ibflow --help` for usage");
            }
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::MiEstimate(a) => cmd_mi_estimate(&a),
        Command::Effdim(a) => cmd_effdim(&a),
        Command::Flownib(FlownibCommand::Run(a)) => cmd_flownib_run(&a),
        Command::Infoplane(InfoplaneCommand::Export(a)) => cmd_infoplane(&a),
        Command::CompareBidir(a) => cmd_compare_bidir(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

#[derive(Serialize, Deserialize)]
struct RunEnvelope<T> {
    command: String,
    version: String,
    config: T,
}

/// Defaults, or the contents of `--config` (a run.json envelope or a bare
/// config).
fn base_config<T: DeserializeOwned + Default>(common: &CommonArgs, command: &str) -> CliResult<T> {
    let Some(path) = &common.config else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        usage(format!("{}: {e}", path.display()))
    })?;
    if let Some(obj) = value.as_object_mut() {
        if obj.contains_key("config") && obj.contains_key("command") {
            let cmd = obj.get("command").and_then(|c| c.as_str()).unwrap_or_default();
            if cmd != command {
                return Err(usage(format!(
                    "{}: written by `{cmd}`, not `{command}`",
                    path.display()
                )));
            }
            value = obj.remove("config").unwrap_or_default();
        }
    }
    serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn prepare_out(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    write_file(path, &s)
}

fn write_run_json<T: Serialize>(out: &Path, command: &str, config: &T) -> CliResult<()> {
    write_json(
        &out.join("run.json"),
        &RunEnvelope {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        },
    )
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn check_rho(rho: f64) -> CliResult<()> {
    if !(rho.abs() < 1.0) {
        return Err(usage(format!("--rho must satisfy |rho| < 1, got {rho}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct MiReport<'a> {
    estimate_nats: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_mi_nats: Option<f64>,
    n: usize,
    config: &'a MiEstimateConfig,
    trace: &'static str,
    timestamp: u64,
}

pub fn cmd_mi_estimate(a: &MiEstimateArgs) -> CliResult<()> {
    let mut cfg: MiEstimateConfig = base_config(&a.common, "mi-estimate")?;
    if let Some(path) = &a.input {
        cfg.source = MiSource::Dump {
            manifest: path.clone(),
            pair: MiPair::Xz,
            layer: 0,
        };
    }
    match a.synthetic {
        None | Some(SyntheticKind::Gaussian) => {}
        Some(other) => {
            return Err(usage(format!(
                "mi-estimate supports `--synthetic gaussian` only, got {other:?}"
            )))
        }
    }
    if a.synthetic.is_some() && !matches!(cfg.source, MiSource::Gaussian { .. }) {
        cfg.source = MiEstimateConfig::default().source;
    }
    match &mut cfg.source {
        MiSource::Gaussian { n, d, rho } => {
            if a.pair.is_some() || a.layer.is_some() {
                return Err(usage("--pair and --layer apply to --input dumps only"));
            }
            *n = a.n.unwrap_or(*n);
            *d = a.d.unwrap_or(*d);
            *rho = a.rho.unwrap_or(*rho);
            check_rho(*rho)?;
            if *d == 0 || *n < 2 {
                return Err(usage("need --n >= 2 and --d >= 1"));
            }
        }
        MiSource::Dump { pair, layer, .. } => {
            if a.rho.is_some() || a.n.is_some() || a.d.is_some() {
                return Err(usage("--rho, --n and --d apply to synthetic data only"));
            }
            *pair = a.pair.unwrap_or(*pair);
            *layer = a.layer.unwrap_or(*layer);
        }
    }
    let m = &mut cfg.mine;
    m.steps = a.steps.unwrap_or(m.steps);
    m.batch_size = a.batch_size.unwrap_or(m.batch_size);
    m.hidden = a.hidden.unwrap_or(m.hidden);
    m.lr = a.lr.unwrap_or(m.lr);
    m.seed = a.seed.unwrap_or(m.seed);
    cfg.bits |= a.bits;
    if m.steps == 0 || m.batch_size < 2 || m.hidden == 0 || !(m.lr > 0.0) {
        return Err(usage("need --steps >= 1, --batch-size >= 2, --hidden >= 1, --lr > 0"));
    }

    let (batch, true_mi) = match &cfg.source {
        MiSource::Gaussian { n, d, rho } => {
            let g = gen_gaussian_pair(*n, *d, *rho, cfg.mine.seed)?;
            (g.batch, Some(g.true_mi_nats))
        }
        MiSource::Dump {
            manifest,
            pair,
            layer,
        } => {
            let reps = load_representation_dump(manifest)?;
            let z = reps.layers.get(*layer).ok_or_else(|| {
                usage(format!(
                    "--layer {layer} out of range: dump has {} layers",
                    reps.layers.len()
                ))
            })?;
            let (x, y) = match pair {
                MiPair::Xz => (reps.x.clone(), z.clone()),
                MiPair::Zy => (z.clone(), reps.y.clone()),
                MiPair::Xy => (reps.x.clone(), reps.y.clone()),
            };
            (MIPairBatch::new(x, y)?, None)
        }
    };
    let (est, trace) = train_mi_critic(&batch, &cfg.mine)?;

    let out = &a.common.out;
    prepare_out(out)?;
    let mut lines = String::new();
    for (step, v) in trace.iter().enumerate() {
        lines.push_str(&serde_json::to_string(&serde_json::json!({"step": step, "estimate_nats": v})).map_err(Error::from)?);
        lines.push('\n');
    }
    write_file(&out.join("mi_trace.jsonl"), &lines)?;
    write_json(
        &out.join("mi.json"),
        &MiReport {
            estimate_nats: est.value_nats,
            estimate_bits: cfg.bits.then(|| to_bits(est.value_nats)),
            true_mi_nats: true_mi,
            n: est.n_joint,
            config: &cfg,
            trace: "mi_trace.jsonl",
            timestamp: timestamp(),
        },
    )?;
    write_run_json(out, "mi-estimate", &cfg)?;
    if cfg.bits {
        println!("{:.6} bits", to_bits(est.value_nats));
    } else {
        println!("{:.6} nats", est.value_nats);
    }
    Ok(())
}

#[derive(Serialize)]
struct EffdimEntry {
    name: String,
    n_rows: usize,
    n_cols: usize,
    d_eff: f64,
    retained: usize,
    eigenvalues: Vec<f64>,
}

pub fn cmd_effdim(a: &EffdimArgs) -> CliResult<()> {
    let mut cfg: EffdimConfig = base_config(&a.common, "effdim")?;
    if a.input.is_some() {
        cfg.input = a.input.clone();
        cfg.manifest = None;
    }
    if a.manifest.is_some() {
        cfg.manifest = a.manifest.clone();
        cfg.input = None;
    }
    cfg.measure = a.measure.unwrap_or(cfg.measure);
    let mats = match (&cfg.input, &cfg.manifest) {
        (Some(p), None) => vec![(p.display().to_string(), read_csv_matrix(p)?)],
        (None, Some(m)) => {
            let reps = load_representation_dump(m)?;
            let mut v = vec![("x".to_string(), reps.x)];
            v.extend(reps.layers.into_iter().enumerate().map(|(k, l)| (format!("layer_{k}"), l)));
            v.push(("y".to_string(), reps.y));
            v
        }
        _ => return Err(usage("give exactly one of --input or --manifest")),
    };
    let mut entries = Vec::with_capacity(mats.len());
    for (name, m) in mats {
        let s = pca_spectrum(&m)?;
        let d = d_eff(&s, cfg.measure).map_err(|e| Error::InvalidInput(format!("{name}: {e}")))?;
        let retained = normalize_spectrum(&s, DEFAULT_REL_FLOOR)?.len();
        println!("{name}\t{d:.6}");
        entries.push(EffdimEntry {
            name,
            n_rows: m.n_rows(),
            n_cols: m.n_cols(),
            d_eff: d,
            retained,
            eigenvalues: s.eigenvalues().to_vec(),
        });
    }
    let out = &a.common.out;
    prepare_out(out)?;
    write_json(
        &out.join("effdim.json"),
        &serde_json::json!({"measure": cfg.measure, "entries": entries}),
    )?;
    write_run_json(out, "effdim", &cfg)
}

fn apply_data_args(data: &mut DataSource, a: &DataArgs) -> CliResult<()> {
    if let Some(p) = &a.manifest {
        *data = DataSource::Manifest(p.clone());
    }
    if let Some(kind) = a.synthetic {
        let n = a.n.unwrap_or(4000);
        let d = a.d.unwrap_or(2);
        *data = DataSource::Synthetic(match kind {
            SyntheticKind::Independent => SyntheticTask::Independent { n, d },
            SyntheticKind::SignBit => SyntheticTask::SignBit { n, d },
            SyntheticKind::Gaussian | SyntheticKind::GaussianChain => SyntheticTask::GaussianChain {
                n,
                d,
                layers: a.layers.unwrap_or(2),
                rho: a.rho.unwrap_or(0.8),
            },
            SyntheticKind::Regression => SyntheticTask::Regression(RegressionTask {
                n,
                d_x: a.d.unwrap_or(RegressionTask::default().d_x),
                d_y: a.d_y.unwrap_or(RegressionTask::default().d_y),
                n_layers: a.layers.unwrap_or(RegressionTask::default().n_layers),
                ..RegressionTask::default()
            }),
        });
        if kind == SyntheticKind::Gaussian || kind == SyntheticKind::GaussianChain {
            check_rho(a.rho.unwrap_or(0.8))?;
        }
        return Ok(());
    }
    // Flags refine a synthetic task loaded from --config.
    if let DataSource::Synthetic(t) = data {
        match t {
            SyntheticTask::Independent { n, d } | SyntheticTask::SignBit { n, d } => {
                *n = a.n.unwrap_or(*n);
                *d = a.d.unwrap_or(*d);
            }
            SyntheticTask::GaussianChain { n, d, layers, rho } => {
                *n = a.n.unwrap_or(*n);
                *d = a.d.unwrap_or(*d);
                *layers = a.layers.unwrap_or(*layers);
                *rho = a.rho.unwrap_or(*rho);
                check_rho(*rho)?;
            }
            SyntheticTask::Regression(r) => {
                r.n = a.n.unwrap_or(r.n);
                r.d_x = a.d.unwrap_or(r.d_x);
                r.d_y = a.d_y.unwrap_or(r.d_y);
                r.n_layers = a.layers.unwrap_or(r.n_layers);
            }
        }
    }
    Ok(())
}

fn apply_train_args(c: &mut FlowNibConfig, a: &TrainArgs) -> CliResult<()> {
    c.epochs = a.epochs.unwrap_or(c.epochs);
    c.steps_per_epoch = a.steps_per_epoch.unwrap_or(c.steps_per_epoch);
    c.batch_size = a.batch_size.unwrap_or(c.batch_size);
    c.hidden = a.hidden.unwrap_or(c.hidden);
    c.lr = a.lr.unwrap_or(c.lr);
    c.schedule.alpha0 = a.alpha0.unwrap_or(c.schedule.alpha0);
    c.schedule.delta = a.delta.unwrap_or(c.schedule.delta);
    c.schedule.floor = a.floor.unwrap_or(c.schedule.floor);
    if a.per_epoch {
        c.decrement = DecrementMode::PerEpoch;
    }
    c.measure = a.measure.unwrap_or(c.measure);
    c.seed = a.seed.unwrap_or(c.seed);
    if a.linear_encoder {
        c.encoder = EncoderMode::Linear;
    }
    c.encoder_lr = a.encoder_lr.unwrap_or(c.encoder_lr);
    c.encoder_noise = a.encoder_noise.unwrap_or(c.encoder_noise);
    c.critic_warmup = a.critic_warmup.unwrap_or(c.critic_warmup);
    c.decoupled |= a.decoupled;
    if c.hidden == 0 {
        return Err(usage("--hidden must be >= 1"));
    }
    c.validate().map_err(|e| usage(e.to_string()))
}

pub fn cmd_flownib_run(a: &FlownibRunArgs) -> CliResult<()> {
    let mut cfg: FlownibRunConfig = base_config(&a.common, "flownib run")?;
    apply_data_args(&mut cfg.data, &a.data)?;
    apply_train_args(&mut cfg.flownib, &a.train)?;
    let reps = cfg.data.load(cfg.flownib.seed)?;
    let traces = run_flownib(&reps, &cfg.flownib)?;
    let out = &a.common.out;
    prepare_out(out)?;
    write_file(&out.join("trace.jsonl"), &traces_to_jsonl(&traces)?)?;
    write_run_json(out, "flownib run", &cfg)?;
    for t in &traces {
        if let Some(r) = t.records.last() {
            println!(
                "layer {}: I(X;Z) {:.4}  I(Z;Y) {:.4}  d_eff {:.3}",
                t.layer, r.i_xz_raw, r.i_zy_raw, r.d_eff_z
            );
        }
    }
    Ok(())
}

fn scale_traces(traces: &mut [LayerTrace], c: f64) {
    for t in traces {
        for r in &mut t.records {
            r.i_xz_raw *= c;
            r.i_zy_raw *= c;
            r.i_xz_norm *= c;
            r.i_zy_norm *= c;
            r.loss *= c;
        }
    }
}

pub fn cmd_infoplane(a: &InfoplaneExportArgs) -> CliResult<()> {
    let mut cfg: InfoplaneConfig = base_config(&a.common, "infoplane export")?;
    if let Some(t) = &a.trace {
        cfg.trace = t.clone();
    }
    cfg.offset = a.offset.unwrap_or(cfg.offset);
    cfg.normalized |= a.normalized;
    cfg.window = a.window.unwrap_or(cfg.window);
    if let Some(m) = a.mic {
        cfg.mic = match m {
            MicKind::Min => MicScore::Min,
            MicKind::Harmonic => MicScore::HarmonicMean,
        };
    }
    cfg.bits |= a.bits;
    if cfg.window == 0 {
        return Err(usage("--window must be >= 1"));
    }
    let text = fs::read_to_string(&cfg.trace).map_err(|e| Error::io(&cfg.trace, e))?;
    let mut traces = traces_from_jsonl(&text).map_err(|e| Error::Parse {
        path: cfg.trace.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    if cfg.bits {
        scale_traces(&mut traces, 1.0 / std::f64::consts::LN_2);
    }
    let rows = plane_rows(&traces, cfg.offset, cfg.normalized, cfg.window)?;
    let mic = mic_summary(&traces, cfg.mic)?;
    let out = &a.common.out;
    prepare_out(out)?;
    write_file(&out.join("plane.csv"), &rows_to_csv(&rows))?;
    write_file(&out.join("plane.jsonl"), &rows_to_jsonl(&rows)?)?;
    write_json(&out.join("mic.json"), &mic)?;
    write_run_json(out, "infoplane export", &cfg)
}

pub fn cmd_compare_bidir(a: &CompareBidirArgs) -> CliResult<()> {
    use rayon::prelude::*;

    let mut cfg: CompareBidirConfig = base_config(&a.common, "compare-bidir")?;
    cfg.seeds = a.seeds.unwrap_or(cfg.seeds);
    cfg.seed_start = a.seed_start.unwrap_or(cfg.seed_start);
    cfg.spectral_draws = a.spectral_draws.unwrap_or(cfg.spectral_draws);
    let b = &mut cfg.bidir;
    b.n = a.n.unwrap_or(b.n);
    b.len = a.len.unwrap_or(b.len);
    b.vocab = a.vocab.unwrap_or(b.vocab);
    b.mine_x.steps = a.steps_x.unwrap_or(b.mine_x.steps);
    b.mine_y.steps = a.steps_y.unwrap_or(b.mine_y.steps);
    if let Some(bs) = a.batch_size {
        b.mine_x.batch_size = bs;
        b.mine_y.batch_size = bs;
    }
    let bad_mine = |m: &MineConfig| m.steps == 0 || m.batch_size < 2;
    if cfg.seeds == 0 || b.len < 2 || b.vocab < 2 || b.n < 2 || bad_mine(&b.mine_x) || bad_mine(&b.mine_y) {
        return Err(usage(
            "need --seeds >= 1, --len >= 2, --vocab >= 2, --n >= 2, steps >= 1, --batch-size >= 2",
        ));
    }
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|k| cfg.seed_start + k).collect();
    let results = seeds
        .par_iter()
        .map(|&s| compare_bidir_seed(&cfg.bidir, s))
        .collect::<Result<Vec<_>>>()?;
    let spectral = spectral_suite(cfg.spectral_draws, cfg.seed_start, cfg.bidir.measure)?;
    let summary = summarize_bidir(&results);
    let spectral_pass = spectral.passed();

    let out = &a.common.out;
    prepare_out(out)?;
    let mut csv = String::from("seed,mi_x_uni,mi_x_bi,mi_y_uni,mi_y_bi,d_eff_uni,d_eff_bi,x_ordered,y_ordered\n");
    for r in &results {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.seed, r.mi_x_uni, r.mi_x_bi, r.mi_y_uni, r.mi_y_bi, r.d_eff_uni, r.d_eff_bi, r.x_ordered, r.y_ordered
        ));
    }
    write_file(&out.join("bidir.csv"), &csv)?;
    let mut csv = String::from("seed,d_eff_uni,d_eff_bi,max_cross_sv,min_cross_sv,holds\n");
    for (seed, c) in &spectral.checks {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            seed, c.d_eff_uni, c.d_eff_bi, c.max_cross_sv, c.min_cross_sv, c.holds()
        ));
    }
    write_file(&out.join("spectral.csv"), &csv)?;
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "seeds": summary.seeds,
            "pass_rate": summary.pass_rate,
            "x_pass_rate": summary.x_pass_rate,
            "y_pass_rate": summary.y_pass_rate,
            "spectral_checked": spectral.checks.len(),
            "spectral_skipped_singular": spectral.skipped.len(),
            "spectral_pass": spectral_pass,
        }),
    )?;
    write_run_json(out, "compare-bidir", &cfg)?;
    println!(
        "pass rate {:.2} over {} seeds; spectral {}/{}",
        summary.pass_rate,
        summary.seeds,
        spectral_pass,
        spectral.checks.len()
    );
    Ok(())
}

fn value_label(v: f64) -> String {
    format!("{v:e}")
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let mut cfg: AblateConfig = base_config(&a.common, "ablate")?;
    cfg.param = a.param.unwrap_or(cfg.param);
    if let Some(v) = &a.values {
        cfg.values = v.clone();
    }
    apply_data_args(&mut cfg.data, &a.data)?;
    apply_train_args(&mut cfg.flownib, &a.train)?;
    cfg.task.n = a.data.n.unwrap_or(cfg.task.n);
    cfg.task.d_x = a.d_x.unwrap_or(cfg.task.d_x);
    cfg.task.n_layers = a.data.layers.unwrap_or(cfg.task.n_layers);
    cfg.task.seed = cfg.flownib.seed;

    let runs: Vec<(String, f64, Vec<LayerTrace>)> = match cfg.param {
        AblateParam::Delta => {
            if cfg.values.len() < 2 || cfg.values.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
                return Err(usage("--values needs at least 2 finite deltas >= 0"));
            }
            let reps = cfg.data.load(cfg.flownib.seed)?;
            delta_ablation(&reps, &cfg.flownib, &cfg.values)?
                .into_iter()
                .map(|r| (format!("delta_{}", value_label(r.delta)), r.delta, r.traces))
                .collect()
        }
        AblateParam::Ydim => {
            if cfg.values.iter().any(|v| !(*v >= 1.0) || v.fract() != 0.0) {
                return Err(usage("--values for ydim must be positive integers"));
            }
            let dims: Vec<usize> = cfg.values.iter().map(|&v| v as usize).collect();
            let summaries = ydim_ablation(&cfg.task, &dims, &cfg.flownib).map_err(|e| match e {
                Error::InvalidInput(m) => usage(m),
                other => other.into(),
            })?;
            summaries
                .into_iter()
                .map(|s| (format!("ydim_{}", s.d_y), s.d_y as f64, s.traces))
                .collect()
        }
    };

    let out = &a.common.out;
    prepare_out(out)?;
    let param = match cfg.param {
        AblateParam::Delta => "delta",
        AblateParam::Ydim => "ydim",
    };
    let mut csv = String::from(
        "param,value,layer,epoch,alpha,i_xz_raw,i_zy_raw,i_xz_norm,i_zy_norm,d_eff_z,d_eff_y,loss\n",
    );
    for (name, value, traces) in &runs {
        write_file(&out.join(format!("trace_{name}.jsonl")), &traces_to_jsonl(traces)?)?;
        for t in traces {
            for r in &t.records {
                csv.push_str(&format!(
                    "{param},{value},{},{},{},{},{},{},{},{},{},{}\n",
                    t.layer,
                    r.epoch,
                    r.alpha,
                    r.i_xz_raw,
                    r.i_zy_raw,
                    r.i_xz_norm,
                    r.i_zy_norm,
                    r.d_eff_z,
                    r.d_eff_y,
                    r.loss
                ));
            }
        }
    }
    write_file(&out.join("ablation.csv"), &csv)?;
    write_run_json(out, "ablate", &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn envelope_and_bare_configs_both_load() {
        let dir = std::env::temp_dir().join(format!("ibflow-cli-unit-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let cfg = MiEstimateConfig {
            bits: true,
            ..MiEstimateConfig::default()
        };
        write_run_json(&dir, "mi-estimate", &cfg).unwrap();
        let common = CommonArgs {
            out: dir.clone(),
            config: Some(dir.join("run.json")),
        };
        let back: MiEstimateConfig = base_config(&common, "mi-estimate").unwrap();
        assert_eq!(back, cfg);
        assert!(base_config::<EffdimConfig>(&common, "effdim").is_err());

        fs::write(dir.join("bare.json"), r#"{"bits": true}"#).unwrap();
        let common = CommonArgs {
            out: dir.clone(),
            config: Some(dir.join("bare.json")),
        };
        let bare: MiEstimateConfig = base_config(&common, "mi-estimate").unwrap();
        assert_eq!(bare, cfg);
        fs::remove_dir_all(&dir).unwrap();
    }
}
