//! Pipeline command line: dataset generation, training, evaluation, latent
//! traversal, hyperparameter sweeps, cross-model tests, and a scripted
//! end-to-end reproduction run.
//!
//! Exit codes: 0 success, 1 quality-threshold failure, 2 usage or I/O error,
//! 3 numeric failure. Every flag is mirrored by a `PREFCVAE_*` environment
//! variable (flags win over the environment, the environment wins over the
//! config file). Every emitted CSV carries config-digest and seed columns so
//! rows stay traceable after concatenation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evalsuite::{
    cross_test, evaluate, traverse, EvalError, EvalReport, PinMode, TRAVERSAL_GRID,
};
use crate::model::{ModelError, PredictorModel};
use crate::plotsvg::{line_plot, PlotConfig, PlotError, Series};
use crate::scenegen::{
    dataset_digest, generate, load_manifest, load_split, DatasetManifest, GenConfig, SceneError,
    Split,
};
use crate::trainer::{
    aggregate_reports, config_digest, train, AggregateReport, EpochLog, TrainConfig, TrainError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_THRESHOLD: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Top-level failure classes; each maps to one documented exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{detail}")]
    Usage { detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric failure: {detail}")]
    Numeric { detail: String },
    #[error("quality thresholds failed: {detail}")]
    Threshold { detail: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Threshold { .. } => EXIT_THRESHOLD,
            CliError::Usage { .. } | CliError::Io { .. } => EXIT_USAGE,
            CliError::Numeric { .. } => EXIT_NUMERIC,
        }
    }
}

fn usage(detail: impl Into<String>) -> CliError {
    CliError::Usage { detail: detail.into() }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io { path, source } => CliError::Io { path, source },
            other => usage(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io { path, source } => CliError::Io { path, source },
            other @ (ModelError::Graph(_) | ModelError::Beta(_)) => {
                CliError::Numeric { detail: other.to_string() }
            }
            other => usage(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Numeric { epoch, scene_id, detail, .. } => CliError::Numeric {
                detail: format!("training diverged at epoch {epoch}, scene {scene_id}: {detail}"),
            },
            TrainError::AllSeedsFailed { detail } => {
                CliError::Numeric { detail: format!("all seeds failed: {detail}") }
            }
            TrainError::Model(m) => m.into(),
            other => usage(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Config { .. } => usage(e.to_string()),
            other => CliError::Numeric { detail: other.to_string() },
        }
    }
}

impl From<PlotError> for CliError {
    fn from(e: PlotError) -> Self {
        CliError::Numeric { detail: e.to_string() }
    }
}

/// Whole-pipeline configuration: dataset generation plus training. Stored as
/// one JSON file; missing fields take their defaults and every matching CLI
/// flag overrides its field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => read_json(p),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Io { path: parent.to_path_buf(), source: e })?;
        }
    }
    fs::write(path, text).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path, &text)
}

/// 16-hex digest binding a checkpoint to a dataset and an evaluation seed;
/// tags rows produced by eval, traverse and crosstest. Hashes the learned
/// weights too: checkpoints that share an architecture but were trained
/// differently must not share a digest.
pub fn checkpoint_digest(model: &PredictorModel, dataset_digest: &str, eval_seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(&model.config).expect("config serializes").as_bytes());
    h.update(model.seed.to_le_bytes());
    for (_, t) in model.params.tensors() {
        for v in &t.data {
            h.update(v.to_le_bytes());
        }
    }
    h.update(dataset_digest.as_bytes());
    h.update(eval_seed.to_le_bytes());
    let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    hex[..16].to_string()
}

#[derive(Debug, Parser)]
#[command(
    name = "prefcvae",
    version,
    about = "Preference-aligned Beta-latent CVAE laboratory",
    after_help = "Exit codes: 0 success, 1 quality-threshold failure, \
                  2 usage or I/O error, 3 numeric failure."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-agent dataset.
    GenData(GenDataArgs),
    /// Train one model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate checkpoints: accuracy, violation rates, re-encoding quality.
    Eval(EvalArgs),
    /// Sweep the semantic latent over its grid and plot velocity curves.
    Traverse(TraverseArgs),
    /// Train and evaluate a grid over use rate, lambda and latent size.
    Sweep(SweepArgs),
    /// Cross-decode checkpoint pairs to test latent-space compatibility.
    Crosstest(CrosstestArgs),
    /// Run the full pipeline and check the headline quality thresholds.
    Repro(ReproArgs),
}

#[derive(Debug, Args)]
#[command(after_help = "Writes train.jsonl, val.jsonl, test.jsonl and manifest.json into --out.")]
pub struct GenDataArgs {
    /// JSON run config; flags override individual fields.
    #[arg(long, env = "PREFCVAE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Dataset seed.
    #[arg(long, env = "PREFCVAE_SEED")]
    pub seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long, env = "PREFCVAE_OUT", default_value = "data")]
    pub out: PathBuf,
    /// Number of training scenes.
    #[arg(long, env = "PREFCVAE_N_TRAIN")]
    pub n_train: Option<usize>,
    /// Number of validation scenes.
    #[arg(long, env = "PREFCVAE_N_VAL")]
    pub n_val: Option<usize>,
    /// Number of test scenes.
    #[arg(long, env = "PREFCVAE_N_TEST")]
    pub n_test: Option<usize>,
    /// Observation jitter sigma in meters.
    #[arg(long, env = "PREFCVAE_JITTER")]
    pub jitter: Option<f64>,
    /// Maximum agents per scene (1..=8).
    #[arg(long, env = "PREFCVAE_MAX_AGENTS")]
    pub max_agents: Option<usize>,
}

#[derive(Debug, Args)]
#[command(after_help = "Writes best.ckpt.json, final.ckpt.json, run.json and log.csv \
                        (columns: config_digest, seed, epoch, base_loss, pref_loss, \
                        gate_fraction, val_loss) into --out.")]
pub struct TrainArgs {
    /// JSON run config; flags override individual fields.
    #[arg(long, env = "PREFCVAE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Dataset directory produced by gen-data.
    #[arg(long, env = "PREFCVAE_DATA", default_value = "data")]
    pub data: PathBuf,
    /// Run output directory.
    #[arg(long, env = "PREFCVAE_OUT", default_value = "runs/run")]
    pub out: PathBuf,
    /// Training seed; defaults to the first configured seed.
    #[arg(long, env = "PREFCVAE_SEED")]
    pub seed: Option<u64>,
    /// Preference use rate (nu); 0 trains the base model.
    #[arg(long, env = "PREFCVAE_USE_RATE")]
    pub use_rate: Option<f64>,
    /// Preference loss weight (lambda).
    #[arg(long, env = "PREFCVAE_LAMBDA")]
    pub lambda: Option<f64>,
    /// Preference label sensitivity (eta).
    #[arg(long, env = "PREFCVAE_ETA")]
    pub eta: Option<f64>,
    /// Latent dimensionality (M).
    #[arg(long, env = "PREFCVAE_NZ")]
    pub nz: Option<usize>,
    /// Training epochs.
    #[arg(long, env = "PREFCVAE_EPOCHS")]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long, env = "PREFCVAE_LR")]
    pub lr: Option<f64>,
}

/// Dataset split selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Traversal pin scope: every agent, or agent 0 only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PinArg {
    All,
    Single,
}

impl From<PinArg> for PinMode {
    fn from(p: PinArg) -> Self {
        match p {
            PinArg::All => PinMode::AllAgents,
            PinArg::Single => PinMode::SingleAgent,
        }
    }
}

#[derive(Debug, Args)]
#[command(after_help = "Writes eval.csv (columns: seed, config_digest, min_ade5, min_fde5, \
                        sw_vr, mbw_vr, aw_vr, vel_min, vel_max, vel_range, monotone, avg_jsd, \
                        mode_loglik, mode_deviation, vel_z1..vel_z9) and eval.json into --out.")]
pub struct EvalArgs {
    /// Dataset directory produced by gen-data.
    #[arg(long, env = "PREFCVAE_DATA", default_value = "data")]
    pub data: PathBuf,
    /// Checkpoints to evaluate, in report order.
    #[arg(long = "checkpoint", env = "PREFCVAE_CHECKPOINT", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    /// Report output directory.
    #[arg(long, env = "PREFCVAE_OUT", default_value = "eval")]
    pub out: PathBuf,
    /// Evaluation stream seed.
    #[arg(long, env = "PREFCVAE_EVAL_SEED", default_value_t = 0)]
    pub eval_seed: u64,
    /// Dataset split to evaluate on.
    #[arg(long, env = "PREFCVAE_SPLIT", value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
#[command(after_help = "Writes traverse.csv (columns: config_digest, seed, z, mean_velocity, \
                        ade, fde) and traverse.svg into --out.")]
pub struct TraverseArgs {
    /// Dataset directory produced by gen-data.
    #[arg(long, env = "PREFCVAE_DATA", default_value = "data")]
    pub data: PathBuf,
    /// Checkpoint to traverse.
    #[arg(long, env = "PREFCVAE_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Report output directory.
    #[arg(long, env = "PREFCVAE_OUT", default_value = "traverse")]
    pub out: PathBuf,
    /// Pin the semantic latent for every agent or for agent 0 only.
    #[arg(long, env = "PREFCVAE_PIN", value_enum, default_value = "all")]
    pub pin: PinArg,
    /// Evaluation stream seed.
    #[arg(long, env = "PREFCVAE_EVAL_SEED", default_value_t = 0)]
    pub eval_seed: u64,
    /// Dataset split to traverse on.
    #[arg(long, env = "PREFCVAE_SPLIT", value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
#[command(after_help = "Writes sweep.csv (columns: config_digest, seed, use_rate, lambda, nz, \
                        metric, value), summary.csv (columns: config_digest, seed, use_rate, \
                        lambda, nz, metric, mean, std, best) and vr_vs_use_rate.svg into --out. \
                        Completed (cell, seed) runs are skipped on rerun via cells/<digest>.json.")]
pub struct SweepArgs {
    /// JSON run config shared by every cell.
    #[arg(long, env = "PREFCVAE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Dataset directory produced by gen-data.
    #[arg(long, env = "PREFCVAE_DATA", default_value = "data")]
    pub data: PathBuf,
    /// Sweep output directory.
    #[arg(long, env = "PREFCVAE_OUT", default_value = "sweep")]
    pub out: PathBuf,
    /// Comma-separated use-rate grid; defaults to 0.05,0.1,0.25,0.5,1.
    #[arg(long, env = "PREFCVAE_USE_RATES", value_delimiter = ',')]
    pub use_rates: Vec<f64>,
    /// Comma-separated lambda grid; defaults to the configured lambda.
    #[arg(long, env = "PREFCVAE_LAMBDAS", value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    /// Comma-separated latent-dimension grid; defaults to the configured M.
    #[arg(long, env = "PREFCVAE_NZS", value_delimiter = ',')]
    pub nzs: Vec<usize>,
    /// Maximum concurrent cell processes.
    #[arg(long, env = "PREFCVAE_JOBS", default_value_t = 1)]
    pub jobs: usize,
    /// Evaluation stream seed.
    #[arg(long, env = "PREFCVAE_EVAL_SEED", default_value_t = 0)]
    pub eval_seed: u64,
}

#[derive(Debug, Args)]
#[command(after_help = "Writes cross.csv (columns: enc_config_digest, dec_config_digest, seed, \
                        ade, fde, aw_vr, eligible_agents) over every ordered checkpoint pair, \
                        self pairs included.")]
pub struct CrosstestArgs {
    /// Dataset directory produced by gen-data.
    #[arg(long, env = "PREFCVAE_DATA", default_value = "data")]
    pub data: PathBuf,
    /// Checkpoints to cross, at least two.
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    /// Report output directory.
    #[arg(long, env = "PREFCVAE_OUT", default_value = "crosstest")]
    pub out: PathBuf,
    /// Evaluation stream seed.
    #[arg(long, env = "PREFCVAE_EVAL_SEED", default_value_t = 0)]
    pub eval_seed: u64,
    /// Dataset split to test on.
    #[arg(long, env = "PREFCVAE_SPLIT", value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
#[command(after_help = "Generates a dataset, trains base / nu=0.25 / nu=1 models over the \
                        configured seeds, evaluates them, and writes table1.csv, table2.csv, \
                        eval_full.csv and traversal.svg into --out. Completed stages are \
                        reused on rerun. Exits 1 when a quality threshold fails.")]
pub struct ReproArgs {
    /// JSON run config; the scripted run overrides counts and seeds in --quick.
    #[arg(long, env = "PREFCVAE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory for the whole run.
    #[arg(long, env = "PREFCVAE_OUT", default_value = "repro")]
    pub out: PathBuf,
    /// 200-scene, 5-epoch, single-seed smoke variant; thresholds reported, not enforced.
    #[arg(long, env = "PREFCVAE_QUICK")]
    pub quick: bool,
    /// Evaluation stream seed.
    #[arg(long, env = "PREFCVAE_EVAL_SEED", default_value_t = 0)]
    pub eval_seed: u64,
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Traverse(a) => cmd_traverse(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Crosstest(a) => cmd_crosstest(a),
        Command::Repro(a) => cmd_repro(a),
    }
}

fn apply_gen_overrides(cfg: &mut GenConfig, args: &GenDataArgs) {
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n_train {
        cfg.n_train = v;
    }
    if let Some(v) = args.n_val {
        cfg.n_val = v;
    }
    if let Some(v) = args.n_test {
        cfg.n_test = v;
    }
    if let Some(v) = args.jitter {
        cfg.jitter_sigma = v;
    }
    if let Some(v) = args.max_agents {
        cfg.max_agents = v;
    }
}

fn apply_train_overrides(cfg: &mut TrainConfig, args: &TrainArgs) {
    if let Some(v) = args.use_rate {
        cfg.pref.use_rate = v;
    }
    if let Some(v) = args.lambda {
        cfg.pref.lambda = v;
    }
    if let Some(v) = args.eta {
        cfg.pref.eta = v;
    }
    if let Some(v) = args.nz {
        cfg.model.latent.m_total = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let mut rc = load_run_config(args.config.as_deref())?;
    apply_gen_overrides(&mut rc.gen, &args);
    rc.gen.validate()?;
    let manifest = generate(&rc.gen, &args.out)?;
    println!(
        "wrote {} scenes to {} (digest {})",
        manifest.n_train + manifest.n_val + manifest.n_test,
        args.out.display(),
        manifest.digest
    );
    Ok(())
}

/// Per-run metadata persisted next to the checkpoints; the digest keys
/// resumability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub digest: String,
    pub seed: u64,
    pub dataset_digest: String,
    pub best_epoch: usize,
    pub gate_fraction: f64,
    pub skipped_steps: u64,
    pub config: TrainConfig,
}

fn log_csv(digest: &str, seed: u64, log: &[EpochLog]) -> String {
    let mut s = String::from("config_digest,seed,epoch,base_loss,pref_loss,gate_fraction,val_loss\n");
    for e in log {
        let _ = writeln!(
            s,
            "{digest},{seed},{},{},{},{},{}",
            e.epoch, e.base_loss, e.pref_loss, e.gate_fraction, e.val_loss
        );
    }
    s
}

/// Trains into `out_dir`, or reuses it when a completed run with the same
/// digest is already there. Returns the validation-best model. A numeric
/// abort saves the last good parameters before reporting the failure.
pub fn train_run(
    out_dir: &Path,
    cfg: &TrainConfig,
    seed: u64,
    train_scenes: &[crate::scenegen::Scene],
    val_scenes: &[crate::scenegen::Scene],
    ds_digest: &str,
) -> Result<(PredictorModel, RunMeta), CliError> {
    let digest = config_digest(cfg, ds_digest, seed);
    let meta_path = out_dir.join("run.json");
    let best_path = out_dir.join("best.ckpt.json");
    if meta_path.is_file() && best_path.is_file() {
        if let Ok(meta) = read_json::<RunMeta>(&meta_path) {
            if meta.digest == digest {
                println!("reusing completed run {digest} at {}", out_dir.display());
                return Ok((PredictorModel::load(&best_path)?, meta));
            }
        }
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io { path: out_dir.to_path_buf(), source: e })?;
    let outcome = match train(train_scenes, val_scenes, cfg, seed) {
        Ok(o) => o,
        Err(TrainError::Numeric { epoch, scene_id, detail, last_good }) => {
            let aborted = out_dir.join("aborted.ckpt.json");
            last_good.save(&aborted)?;
            return Err(CliError::Numeric {
                detail: format!(
                    "training diverged at epoch {epoch}, scene {scene_id}: {detail} \
                     (last good parameters saved to {})",
                    aborted.display()
                ),
            });
        }
        Err(e) => return Err(e.into()),
    };
    outcome.final_model.save(&out_dir.join("final.ckpt.json"))?;
    outcome.best_model.save(&best_path)?;
    write_text(&out_dir.join("log.csv"), &log_csv(&digest, seed, &outcome.log))?;
    let meta = RunMeta {
        digest: digest.clone(),
        seed,
        dataset_digest: ds_digest.to_string(),
        best_epoch: outcome.best_epoch,
        gate_fraction: outcome.gate_fraction,
        skipped_steps: outcome.skipped_steps,
        config: cfg.clone(),
    };
    write_json(&meta_path, &meta)?;
    println!(
        "trained run {digest}: best epoch {}, gate fraction {:.3}, skipped steps {}",
        meta.best_epoch, meta.gate_fraction, meta.skipped_steps
    );
    Ok((outcome.best_model, meta))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut rc = load_run_config(args.config.as_deref())?;
    apply_train_overrides(&mut rc.train, &args);
    rc.train.validate()?;
    let manifest = load_manifest(&args.data)?;
    let train_scenes = load_split(&args.data, Split::Train)?;
    let val_scenes = load_split(&args.data, Split::Val)?;
    let seed = args.seed.or_else(|| rc.train.seeds.first().copied()).unwrap_or(1);
    let (_, meta) =
        train_run(&args.out, &rc.train, seed, &train_scenes, &val_scenes, &manifest.digest)?;
    println!("run {} complete in {}", meta.digest, args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.data)?;
    let scenes = load_split(&args.data, args.split.into())?;
    let mut csv = format!("{}\n", EvalReport::csv_header());
    let mut reports = Vec::new();
    for ckpt in &args.checkpoints {
        let model = PredictorModel::load(ckpt)?;
        let digest = checkpoint_digest(&model, &manifest.digest, args.eval_seed);
        let report = evaluate(&model, &scenes, args.eval_seed, &digest)?;
        println!(
            "{}: minADE5 {:.4}, minFDE5 {:.4}, AW VR {:.3}%, range {:.3} m/s, monotone {}",
            ckpt.display(),
            report.min_ade5,
            report.min_fde5,
            report.aw_vr,
            report.vel_range,
            report.monotone
        );
        csv.push_str(&report.to_csv_row());
        csv.push('\n');
        reports.push(report);
    }
    write_text(&args.out.join("eval.csv"), &csv)?;
    write_json(&args.out.join("eval.json"), &reports)?;
    Ok(())
}

fn cmd_traverse(args: TraverseArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.data)?;
    let scenes = load_split(&args.data, args.split.into())?;
    let model = PredictorModel::load(&args.checkpoint)?;
    let digest = checkpoint_digest(&model, &manifest.digest, args.eval_seed);
    let t = traverse(&model, &scenes, args.pin.into(), args.eval_seed)?;
    let mut csv = String::from("config_digest,seed,z,mean_velocity,ade,fde\n");
    for i in 0..t.grid.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            digest, args.eval_seed, t.grid[i], t.mean_velocity[i], t.ade[i], t.fde[i]
        );
    }
    write_text(&args.out.join("traverse.csv"), &csv)?;
    let series = [Series {
        label: "mean velocity".to_string(),
        points: t.grid.iter().copied().zip(t.mean_velocity.iter().copied()).collect(),
    }];
    let svg = line_plot(
        &PlotConfig {
            title: format!("Latent traversal ({digest})"),
            x_label: "semantic latent z".to_string(),
            y_label: "mean velocity (m/s)".to_string(),
            ..PlotConfig::default()
        },
        &series,
    )?;
    write_text(&args.out.join("traverse.svg"), &svg)?;
    println!(
        "velocity range {:.3} m/s ({:.3} to {:.3}), strictly increasing: {}",
        t.vel_range, t.vel_min, t.vel_max, t.strictly_increasing
    );
    Ok(())
}

fn cmd_crosstest(args: CrosstestArgs) -> Result<(), CliError> {
    if args.checkpoints.len() < 2 {
        return Err(usage("crosstest needs at least two --checkpoint files"));
    }
    let manifest = load_manifest(&args.data)?;
    let scenes = load_split(&args.data, args.split.into())?;
    let mut models = Vec::new();
    for p in &args.checkpoints {
        let model = PredictorModel::load(p)?;
        let digest = checkpoint_digest(&model, &manifest.digest, args.eval_seed);
        models.push((digest, model));
    }
    let mut csv =
        String::from("enc_config_digest,dec_config_digest,seed,ade,fde,aw_vr,eligible_agents\n");
    let mut matrix = vec![vec![0.0; models.len()]; models.len()];
    for (i, (enc_digest, enc)) in models.iter().enumerate() {
        for (j, (dec_digest, dec)) in models.iter().enumerate() {
            let r = cross_test(enc, dec, &scenes, args.eval_seed)?;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                enc_digest, dec_digest, args.eval_seed, r.ade, r.fde, r.aw_vr, r.eligible_agents
            );
            matrix[i][j] = r.aw_vr;
        }
    }
    write_text(&args.out.join("cross.csv"), &csv)?;
    println!("agent-wise VR (%), encoders down, decoders across:");
    let mut header = String::from("         ");
    for (d, _) in &models {
        let _ = write!(header, " {:>8}", &d[..8]);
    }
    println!("{header}");
    for (i, (d, _)) in models.iter().enumerate() {
        let mut row = format!("{:>9}", &d[..8]);
        for aw in &matrix[i] {
            let _ = write!(row, " {aw:>8.3}");
        }
        println!("{row}");
    }
    Ok(())
}

const DEFAULT_USE_RATES: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 1.0];

/// One sweep grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub use_rate: f64,
    pub lambda: f64,
    pub nz: usize,
}

fn sweep_grid(args: &SweepArgs, cfg: &TrainConfig) -> Vec<Cell> {
    let use_rates = if args.use_rates.is_empty() {
        DEFAULT_USE_RATES.to_vec()
    } else {
        args.use_rates.clone()
    };
    let lambdas =
        if args.lambdas.is_empty() { vec![cfg.pref.lambda] } else { args.lambdas.clone() };
    let nzs = if args.nzs.is_empty() { vec![cfg.model.latent.m_total] } else { args.nzs.clone() };
    let mut cells = Vec::with_capacity(use_rates.len() * lambdas.len() * nzs.len());
    for &use_rate in &use_rates {
        for &lambda in &lambdas {
            for &nz in &nzs {
                cells.push(Cell { use_rate, lambda, nz });
            }
        }
    }
    cells
}

fn cell_config(base: &TrainConfig, cell: &Cell) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.pref.use_rate = cell.use_rate;
    cfg.pref.lambda = cell.lambda;
    cfg.model.latent.m_total = cell.nz;
    cfg
}

/// One completed (cell, seed) run; persisted under cells/<digest>.json so
/// reruns skip it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRecord {
    pub digest: String,
    pub seed: u64,
    pub use_rate: f64,
    pub lambda: f64,
    pub nz: usize,
    pub report: EvalReport,
}

struct SweepItem {
    cell_ix: usize,
    cell: Cell,
    seed: u64,
    digest: String,
}

/// Children must see only the parent's explicit flags, not its environment.
fn scrub_env(cmd: &mut Process) {
    for (k, _) in std::env::vars_os() {
        if k.to_string_lossy().starts_with("PREFCVAE_") {
            cmd.env_remove(k);
        }
    }
}

fn child_failure(stage: &str, out: &std::process::Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr);
    let tail: Vec<&str> = err.lines().rev().take(3).collect();
    let tail: Vec<&str> = tail.into_iter().rev().collect();
    format!("{stage} exited with status {:?}: {}", out.status.code(), tail.join(" | "))
}

/// Trains and evaluates one (cell, seed) pair in fully isolated child
/// processes of this same binary.
fn run_sweep_item(
    exe: &Path,
    config_path: &Path,
    data_dir: &Path,
    runs_dir: &Path,
    eval_seed: u64,
    item: &SweepItem,
) -> Result<EvalReport, String> {
    let run_dir = runs_dir.join(&item.digest);
    let mut cmd = Process::new(exe);
    cmd.arg("train")
        .arg("--config")
        .arg(config_path)
        .arg("--data")
        .arg(data_dir)
        .arg("--out")
        .arg(&run_dir)
        .arg("--seed")
        .arg(item.seed.to_string())
        .arg("--use-rate")
        .arg(item.cell.use_rate.to_string())
        .arg("--lambda")
        .arg(item.cell.lambda.to_string())
        .arg("--nz")
        .arg(item.cell.nz.to_string());
    scrub_env(&mut cmd);
    let out = cmd.output().map_err(|e| format!("spawning train failed: {e}"))?;
    if !out.status.success() {
        return Err(child_failure("train", &out));
    }
    let eval_dir = run_dir.join("eval");
    let mut cmd = Process::new(exe);
    cmd.arg("eval")
        .arg("--data")
        .arg(data_dir)
        .arg("--split")
        .arg("test")
        .arg("--eval-seed")
        .arg(eval_seed.to_string())
        .arg("--out")
        .arg(&eval_dir)
        .arg("--checkpoint")
        .arg(run_dir.join("best.ckpt.json"));
    scrub_env(&mut cmd);
    let out = cmd.output().map_err(|e| format!("spawning eval failed: {e}"))?;
    if !out.status.success() {
        return Err(child_failure("eval", &out));
    }
    let reports: Vec<EvalReport> =
        read_json(&eval_dir.join("eval.json")).map_err(|e| e.to_string())?;
    reports.into_iter().next().ok_or_else(|| "eval produced no report".to_string())
}

fn stats_rows(agg: &AggregateReport) -> Vec<(&'static str, f64, f64, f64)> {
    let m = &agg.mean;
    let s = &agg.std;
    let b = &agg.best;
    vec![
        ("min_ade5", m.min_ade5, s.min_ade5, b.min_ade5),
        ("min_fde5", m.min_fde5, s.min_fde5, b.min_fde5),
        ("sw_vr", m.sw_vr, s.sw_vr, b.sw_vr),
        ("mbw_vr", m.mbw_vr, s.mbw_vr, b.mbw_vr),
        ("aw_vr", m.aw_vr, s.aw_vr, b.aw_vr),
        ("vel_range", m.vel_range, s.vel_range, b.vel_range),
        ("avg_jsd", m.avg_jsd, s.avg_jsd, b.avg_jsd),
        ("mode_loglik", m.mode_loglik, s.mode_loglik, b.mode_loglik),
        ("mode_deviation", m.mode_deviation, s.mode_deviation, b.mode_deviation),
    ]
}

fn metric_pairs(r: &EvalReport) -> Vec<(&'static str, f64)> {
    vec![
        ("min_ade5", r.min_ade5),
        ("min_fde5", r.min_fde5),
        ("sw_vr", r.sw_vr),
        ("mbw_vr", r.mbw_vr),
        ("aw_vr", r.aw_vr),
        ("vel_min", r.vel_min),
        ("vel_max", r.vel_max),
        ("vel_range", r.vel_range),
        ("monotone", if r.monotone { 1.0 } else { 0.0 }),
        ("avg_jsd", r.avg_jsd),
        ("mode_loglik", r.mode_loglik),
        ("mode_deviation", r.mode_deviation),
    ]
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let rc = load_run_config(args.config.as_deref())?;
    rc.train.validate()?;
    let manifest = load_manifest(&args.data)?;
    let cells = sweep_grid(&args, &rc.train);
    for cell in &cells {
        cell_config(&rc.train, cell).validate()?;
    }
    let cells_dir = args.out.join("cells");
    let runs_dir = args.out.join("runs");
    fs::create_dir_all(&cells_dir)
        .map_err(|e| CliError::Io { path: cells_dir.clone(), source: e })?;
    let config_path = args.out.join("sweep_config.json");
    write_json(&config_path, &rc)?;
    let exe = std::env::current_exe()
        .map_err(|e| usage(format!("cannot locate own executable: {e}")))?;

    let mut items = Vec::new();
    for (cell_ix, cell) in cells.iter().enumerate() {
        let cfg = cell_config(&rc.train, cell);
        for &seed in &rc.train.seeds {
            let digest = config_digest(&cfg, &manifest.digest, seed);
            items.push(SweepItem { cell_ix, cell: *cell, seed, digest });
        }
    }

    let mut records: Vec<Option<SweepRecord>> = vec![None; items.len()];
    let mut todo = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let rec_path = cells_dir.join(format!("{}.json", item.digest));
        match read_json::<SweepRecord>(&rec_path) {
            Ok(rec) if rec.digest == item.digest => records[i] = Some(rec),
            _ => todo.push(i),
        }
    }
    println!(
        "sweep: {} cells x {} seeds, {} runs already complete, {} to go",
        cells.len(),
        rc.train.seeds.len(),
        items.len() - todo.len(),
        todo.len()
    );

    let cursor = AtomicUsize::new(0);
    let collected: Mutex<Vec<(usize, Result<SweepRecord, String>)>> = Mutex::new(Vec::new());
    let workers = args.jobs.min(todo.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = cursor.fetch_add(1, Ordering::SeqCst);
                if k >= todo.len() {
                    break;
                }
                let item = &items[todo[k]];
                let res = run_sweep_item(
                    &exe,
                    &config_path,
                    &args.data,
                    &runs_dir,
                    args.eval_seed,
                    item,
                )
                .map(|report| SweepRecord {
                    digest: item.digest.clone(),
                    seed: item.seed,
                    use_rate: item.cell.use_rate,
                    lambda: item.cell.lambda,
                    nz: item.cell.nz,
                    report,
                });
                match &res {
                    Ok(r) => println!(
                        "cell nu={} lambda={} nz={} seed {}: AW VR {:.3}%",
                        r.use_rate, r.lambda, r.nz, r.seed, r.report.aw_vr
                    ),
                    Err(e) => eprintln!(
                        "cell nu={} lambda={} nz={} seed {} failed: {e}",
                        item.cell.use_rate, item.cell.lambda, item.cell.nz, item.seed
                    ),
                }
                collected.lock().expect("sweep worker poisoned").push((todo[k], res));
            });
        }
    });

    let mut failures: Vec<(usize, String)> = Vec::new();
    for (i, res) in collected.into_inner().expect("sweep worker poisoned") {
        match res {
            Ok(rec) => {
                write_json(&cells_dir.join(format!("{}.json", rec.digest)), &rec)?;
                records[i] = Some(rec);
            }
            Err(e) => failures.push((i, e)),
        }
    }
    failures.sort_by_key(|(i, _)| *i);
    if !failures.is_empty() {
        let mut s = String::new();
        for (i, e) in &failures {
            let _ = writeln!(s, "{} seed {}: {e}", items[*i].digest, items[*i].seed);
        }
        write_text(&args.out.join("failures.log"), &s)?;
        eprintln!("{} of {} cell runs failed; details in failures.log", failures.len(), items.len());
    }
    if records.iter().all(Option::is_none) {
        return Err(CliError::Numeric { detail: "every sweep cell failed".to_string() });
    }

    let mut csv = String::from("config_digest,seed,use_rate,lambda,nz,metric,value\n");
    for rec in records.iter().flatten() {
        for (metric, value) in metric_pairs(&rec.report) {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{metric},{value}",
                rec.digest, rec.seed, rec.use_rate, rec.lambda, rec.nz
            );
        }
    }
    write_text(&args.out.join("sweep.csv"), &csv)?;

    let mut summary = String::from("config_digest,seed,use_rate,lambda,nz,metric,mean,std,best\n");
    // Keyed by (lambda, nz); each holds (use_rate, mean, best) AW VR points.
    let mut curves: Vec<((f64, usize), Vec<(f64, f64)>, Vec<(f64, f64)>)> = Vec::new();
    for (cell_ix, cell) in cells.iter().enumerate() {
        let cell_records: Vec<&SweepRecord> = items
            .iter()
            .zip(&records)
            .filter(|(item, _)| item.cell_ix == cell_ix)
            .filter_map(|(_, r)| r.as_ref())
            .collect();
        if cell_records.is_empty() {
            continue;
        }
        let agg =
            aggregate_reports(cell_records.iter().map(|r| r.report.clone()).collect(), vec![])?;
        let best_digest = cell_records
            .iter()
            .find(|r| r.seed == agg.best.seed)
            .map(|r| r.digest.clone())
            .unwrap_or_default();
        for (metric, mean, std, best) in stats_rows(&agg) {
            let _ = writeln!(
                summary,
                "{best_digest},{},{},{},{},{metric},{mean},{std},{best}",
                agg.best.seed, cell.use_rate, cell.lambda, cell.nz
            );
        }
        let key = (cell.lambda, cell.nz);
        let entry = match curves.iter_mut().find(|(k, _, _)| *k == key) {
            Some(e) => e,
            None => {
                curves.push((key, Vec::new(), Vec::new()));
                curves.last_mut().expect("just pushed")
            }
        };
        entry.1.push((cell.use_rate, agg.mean.aw_vr));
        entry.2.push((cell.use_rate, agg.best.aw_vr));
    }
    write_text(&args.out.join("summary.csv"), &summary)?;

    let mut series = Vec::new();
    for ((lambda, nz), mut mean_pts, mut best_pts) in curves {
        mean_pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        best_pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(Series { label: format!("lambda={lambda} M={nz} mean"), points: mean_pts });
        series.push(Series { label: format!("lambda={lambda} M={nz} best"), points: best_pts });
    }
    if !series.is_empty() {
        let svg = line_plot(
            &PlotConfig {
                title: "Agent-wise violation rate vs use rate".to_string(),
                x_label: "use rate (nu)".to_string(),
                y_label: "AW VR (%)".to_string(),
                ..PlotConfig::default()
            },
            &series,
        )?;
        write_text(&args.out.join("vr_vs_use_rate.svg"), &svg)?;
    }
    let done = records.iter().flatten().count();
    println!("sweep complete: {done} of {} cell runs succeeded", items.len());
    Ok(())
}

/// Reuses a dataset directory when its manifest matches the requested
/// parameters and the files still hash to the recorded digest.
/// Generates the dataset unless `dir` already holds a matching one.
pub fn ensure_dataset(cfg: &GenConfig, dir: &Path) -> Result<DatasetManifest, CliError> {
    if dir.join("manifest.json").is_file() {
        if let Ok(m) = load_manifest(dir) {
            let same = m.seed == cfg.seed
                && m.n_train == cfg.n_train
                && m.n_val == cfg.n_val
                && m.n_test == cfg.n_test
                && m.jitter_sigma == cfg.jitter_sigma
                && m.max_agents == cfg.max_agents;
            if same && dataset_digest(dir).is_ok_and(|d| d == m.digest) {
                println!("reusing dataset at {} (digest {})", dir.display(), m.digest);
                return Ok(m);
            }
        }
        println!("existing dataset does not match, regenerating");
    }
    let m = generate(cfg, dir)?;
    println!("generated dataset at {} (digest {})", dir.display(), m.digest);
    Ok(m)
}

fn table1_csv(aggs: &[(&str, AggregateReport)]) -> String {
    let mut s = String::from(
        "variant,config_digest,seed,min_ade5,min_fde5,sw_vr,mbw_vr,aw_vr,vel_range,monotone,\
         min_ade5_mean,min_ade5_std,aw_vr_mean,aw_vr_std\n",
    );
    for (name, agg) in aggs {
        let b = &agg.best;
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            b.config_digest,
            b.seed,
            b.min_ade5,
            b.min_fde5,
            b.sw_vr,
            b.mbw_vr,
            b.aw_vr,
            b.vel_range,
            b.monotone,
            agg.mean.min_ade5,
            agg.std.min_ade5,
            agg.mean.aw_vr,
            agg.std.aw_vr
        );
    }
    s
}

fn table2_csv(aggs: &[(&str, AggregateReport)]) -> String {
    let mut s = String::from(
        "variant,config_digest,seed,avg_jsd,mode_loglik,mode_deviation,\
         avg_jsd_mean,avg_jsd_std,mode_deviation_mean,mode_deviation_std\n",
    );
    for (name, agg) in aggs {
        let b = &agg.best;
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{},{},{},{}",
            b.config_digest,
            b.seed,
            b.avg_jsd,
            b.mode_loglik,
            b.mode_deviation,
            agg.mean.avg_jsd,
            agg.std.avg_jsd,
            agg.mean.mode_deviation,
            agg.std.mode_deviation
        );
    }
    s
}

fn cmd_repro(args: ReproArgs) -> Result<(), CliError> {
    let mut rc = load_run_config(args.config.as_deref())?;
    if args.quick {
        rc.gen.n_train = 200;
        rc.gen.n_val = 40;
        rc.gen.n_test = 40;
        rc.train.epochs = 5;
        rc.train.seeds.truncate(1);
    }
    rc.gen.validate()?;
    rc.train.validate()?;
    let data_dir = args.out.join("dataset");
    let manifest = ensure_dataset(&rc.gen, &data_dir)?;
    let train_scenes = load_split(&data_dir, Split::Train)?;
    let val_scenes = load_split(&data_dir, Split::Val)?;
    let test_scenes = load_split(&data_dir, Split::Test)?;

    let variants: [(&str, &str, f64); 3] =
        [("base", "nu=0 (base)", 0.0), ("nu025", "nu=0.25", 0.25), ("nu100", "nu=1", 1.0)];
    let mut aggs: Vec<(&str, AggregateReport)> = Vec::new();
    let mut series = Vec::new();
    let mut full_rows = vec![format!("variant,{}", EvalReport::csv_header())];
    for (name, label, nu) in variants {
        let mut cfg = rc.train.clone();
        cfg.pref.use_rate = nu;
        let mut reports = Vec::new();
        let mut failures = Vec::new();
        for &seed in &cfg.seeds {
            let run_dir = args.out.join("runs").join(format!("{name}-s{seed}"));
            let attempt =
                train_run(&run_dir, &cfg, seed, &train_scenes, &val_scenes, &manifest.digest)
                    .and_then(|(best, meta)| {
                        evaluate(&best, &test_scenes, args.eval_seed, &meta.digest)
                            .map_err(CliError::from)
                    });
            match attempt {
                Ok(r) => {
                    full_rows.push(format!("{name},{}", r.to_csv_row()));
                    reports.push(r);
                }
                Err(CliError::Numeric { detail }) => {
                    eprintln!("variant {name}, seed {seed} failed: {detail}");
                    failures.push((seed, detail));
                }
                Err(e) => return Err(e),
            }
        }
        let agg = aggregate_reports(reports, failures)?;
        series.push(Series {
            label: label.to_string(),
            points: TRAVERSAL_GRID
                .iter()
                .copied()
                .zip(agg.best.per_z_velocity.iter().copied())
                .collect(),
        });
        aggs.push((name, agg));
    }

    let mut full_csv = full_rows.join("\n");
    full_csv.push('\n');
    write_text(&args.out.join("eval_full.csv"), &full_csv)?;
    write_text(&args.out.join("table1.csv"), &table1_csv(&aggs))?;
    write_text(&args.out.join("table2.csv"), &table2_csv(&aggs))?;
    let svg = line_plot(
        &PlotConfig {
            title: "Latent traversal: mean velocity per pinned z".to_string(),
            x_label: "semantic latent z".to_string(),
            y_label: "mean velocity (m/s)".to_string(),
            ..PlotConfig::default()
        },
        &series,
    )?;
    write_text(&args.out.join("traversal.svg"), &svg)?;

    let base = &aggs[0].1;
    let nu25 = &aggs[1].1;
    let pref = &aggs[2].1;
    let base_pick = checks::pick_base(&base.reports).unwrap_or(&base.best);
    let mut outcomes = checks::check_controllability(base_pick, &pref.best);
    outcomes.extend(checks::check_accuracy(&base.mean, &pref.mean));
    outcomes.extend(checks::check_reencoding(base_pick, &pref.best));
    outcomes.push(checks::check_use_rate(&nu25.best));
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    if args.quick {
        println!("quick mode: thresholds reported, not enforced ({failed} failing)");
    } else if failed > 0 {
        return Err(CliError::Threshold {
            detail: format!("{failed} of {} checks failed", outcomes.len()),
        });
    } else {
        println!("all {} checks passed", outcomes.len());
    }
    println!("outputs in {}", args.out.display());
    Ok(())
}

/// Quality gates distilled from the headline comparative claims; shared by
/// `repro` and the verification test suite.
pub mod checks {
    use crate::evalsuite::{CrossReport, EvalReport};
    use crate::trainer::MetricStats;

    /// Best-of-seeds preference-model agent-wise VR ceiling, percent.
    pub const PREF_AW_VR_MAX: f64 = 2.0;
    /// Base-model traversal velocity range ceiling, m/s.
    pub const BASE_RANGE_MAX: f64 = 0.3;
    /// Preference-model traversal velocity range floor, m/s.
    pub const PREF_RANGE_MIN: f64 = 1.0;
    /// Preference-model range must exceed the base range by this factor.
    pub const PREF_RANGE_RATIO_MIN: f64 = 10.0;
    /// Allowed relative accuracy degradation against the base model.
    pub const ACCURACY_SLACK: f64 = 0.10;
    /// Preference-model mode deviation ceiling as a fraction of the base's.
    pub const MODE_DEV_RATIO_MAX: f64 = 1.0 / 3.0;
    /// Preference-model re-encoded JSD floor as a multiple of the base's.
    pub const JSD_RATIO_MIN: f64 = 5.0;
    /// Best-of-seeds AW VR ceiling at use rate 0.25, percent.
    pub const NU25_AW_VR_MAX: f64 = 5.0;
    /// Cross-pair VR may exceed the smaller self-pair VR by this factor.
    pub const CROSS_VR_FACTOR: f64 = 2.0;
    /// Absolute floor (%) on the cross bound, so self pairs at exactly 0%
    /// leave a single stray violation tolerable.
    pub const CROSS_VR_FLOOR: f64 = 0.5;

    /// One named threshold with its measured evidence.
    #[derive(Debug, Clone)]
    pub struct CriterionOutcome {
        pub name: &'static str,
        pub pass: bool,
        pub detail: String,
    }

    impl CriterionOutcome {
        fn new(name: &'static str, pass: bool, detail: String) -> Self {
            Self { name, pass, detail }
        }

        pub fn line(&self) -> String {
            format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
        }
    }

    /// Representative base model across seeds: flattest traversal wins, with
    /// prediction accuracy breaking ties. The base model's headline claim is
    /// an uninformative semantic slot, so the aggregate's VR-ranked best is
    /// the wrong pick for it.
    pub fn pick_base(reports: &[EvalReport]) -> Option<&EvalReport> {
        reports.iter().min_by(|a, b| {
            (a.vel_range, a.min_ade5)
                .partial_cmp(&(b.vel_range, b.min_ade5))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }

    /// Best preference model: low AW VR, monotone traversal, wide velocity
    /// range; best base model: near-flat traversal.
    pub fn check_controllability(base: &EvalReport, pref: &EvalReport) -> Vec<CriterionOutcome> {
        vec![
            CriterionOutcome::new(
                "controllability.aw_vr",
                pref.aw_vr <= PREF_AW_VR_MAX,
                format!("preference AW VR {:.3}% (limit {PREF_AW_VR_MAX}%)", pref.aw_vr),
            ),
            CriterionOutcome::new(
                "controllability.monotone",
                pref.monotone,
                format!("per-z mean velocity strictly increasing: {}", pref.monotone),
            ),
            CriterionOutcome::new(
                "controllability.base_range",
                base.vel_range <= BASE_RANGE_MAX,
                format!("base velocity range {:.3} m/s (limit {BASE_RANGE_MAX} m/s)", base.vel_range),
            ),
            CriterionOutcome::new(
                "controllability.pref_range",
                pref.vel_range >= PREF_RANGE_MIN,
                format!(
                    "preference velocity range {:.3} m/s (floor {PREF_RANGE_MIN} m/s)",
                    pref.vel_range
                ),
            ),
            CriterionOutcome::new(
                "controllability.range_ratio",
                pref.vel_range >= PREF_RANGE_RATIO_MIN * base.vel_range,
                format!(
                    "range ratio {:.1}x (floor {PREF_RANGE_RATIO_MIN}x)",
                    pref.vel_range / base.vel_range
                ),
            ),
        ]
    }

    /// Mean accuracy across the shared seed set must stay within the slack.
    pub fn check_accuracy(base: &MetricStats, pref: &MetricStats) -> Vec<CriterionOutcome> {
        let ade_limit = (1.0 + ACCURACY_SLACK) * base.min_ade5;
        let fde_limit = (1.0 + ACCURACY_SLACK) * base.min_fde5;
        vec![
            CriterionOutcome::new(
                "accuracy.min_ade5",
                pref.min_ade5 <= ade_limit,
                format!(
                    "preference minADE5 {:.4} vs base {:.4} (limit {:.4})",
                    pref.min_ade5, base.min_ade5, ade_limit
                ),
            ),
            CriterionOutcome::new(
                "accuracy.min_fde5",
                pref.min_fde5 <= fde_limit,
                format!(
                    "preference minFDE5 {:.4} vs base {:.4} (limit {:.4})",
                    pref.min_fde5, base.min_fde5, fde_limit
                ),
            ),
        ]
    }

    /// Re-encoded posteriors: tighter modes and far more distinct pins than
    /// the base model.
    pub fn check_reencoding(base: &EvalReport, pref: &EvalReport) -> Vec<CriterionOutcome> {
        vec![
            CriterionOutcome::new(
                "reencode.mode_deviation",
                pref.mode_deviation <= MODE_DEV_RATIO_MAX * base.mode_deviation,
                format!(
                    "preference {:.4} vs base {:.4} (limit {:.4})",
                    pref.mode_deviation,
                    base.mode_deviation,
                    MODE_DEV_RATIO_MAX * base.mode_deviation
                ),
            ),
            CriterionOutcome::new(
                "reencode.avg_jsd",
                pref.avg_jsd >= JSD_RATIO_MIN * base.avg_jsd,
                format!(
                    "preference {:.4} vs base {:.4} (floor {:.4})",
                    pref.avg_jsd,
                    base.avg_jsd,
                    JSD_RATIO_MIN * base.avg_jsd
                ),
            ),
        ]
    }

    /// Ordering must survive dropping three quarters of the preference pairs.
    pub fn check_use_rate(nu25: &EvalReport) -> CriterionOutcome {
        CriterionOutcome::new(
            "use_rate.aw_vr",
            nu25.aw_vr <= NU25_AW_VR_MAX,
            format!("AW VR {:.3}% at use rate 0.25 (limit {NU25_AW_VR_MAX}%)", nu25.aw_vr),
        )
    }

    /// Shared bound for the cross checks: twice the smaller self-pair VR,
    /// floored at [`CROSS_VR_FLOOR`].
    pub fn cross_bound(self_a: &CrossReport, self_b: &CrossReport) -> f64 {
        (CROSS_VR_FACTOR * self_a.aw_vr.min(self_b.aw_vr)).max(CROSS_VR_FLOOR)
    }

    /// Compatible pairs must cross-decode within the bound.
    pub fn check_cross_within(
        self_a: &CrossReport,
        self_b: &CrossReport,
        ab: &CrossReport,
        ba: &CrossReport,
    ) -> CriterionOutcome {
        let bound = cross_bound(self_a, self_b);
        let worst = ab.aw_vr.max(ba.aw_vr);
        CriterionOutcome::new(
            "cross.within",
            worst <= bound,
            format!("cross AW VR {worst:.3}% within bound {bound:.3}%"),
        )
    }

    /// Incompatible pairs must break the same bound.
    pub fn check_cross_exceeds(
        self_a: &CrossReport,
        self_b: &CrossReport,
        ab: &CrossReport,
        ba: &CrossReport,
    ) -> CriterionOutcome {
        let bound = cross_bound(self_a, self_b);
        let worst = ab.aw_vr.max(ba.aw_vr);
        CriterionOutcome::new(
            "cross.exceeds",
            worst > bound,
            format!("cross AW VR {worst:.3}% exceeds bound {bound:.3}%"),
        )
    }
}
