//! `probunet` command line: generate-data, train, sample, evaluate.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use probunet_core::data::{
    generate_synthetic, read_manifest, read_tensor, write_dataset, Split, SplitSpec, SynthConfig, TensorHeader, TensorWriter,
};
use probunet_core::diagnostics::{build_report, EvalConfig, Prediction};
use probunet_core::losses::{ObjectiveKind, ObjectiveSpec};
use probunet_core::trainer::{train, CheckpointDir, TrainConfig};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const THREADS_ENV: &str = "PROBUNET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "probunet", version, about = "Probabilistic U-Net statistical downscaling")]
pub struct Cli {
    /// JSON run configuration; command-line flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic train/val/test dataset.
    GenerateData(GenerateArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Draw ensemble members for every day of a split.
    Sample(SampleArgs),
    /// Score prediction ensembles against the truth and write a report.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training years.
    #[arg(long)]
    pub years: Option<u32>,
    #[arg(long)]
    pub val_years: Option<u32>,
    #[arg(long)]
    pub test_years: Option<u32>,
    /// High-resolution grid side.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub factor: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossName {
    Afcrps,
    Wmse,
    Msssim,
    Tuned,
}

impl LossName {
    fn name(self) -> &'static str {
        match self {
            LossName::Afcrps => "afcrps",
            LossName::Wmse => "wmse",
            LossName::Msssim => "msssim",
            LossName::Tuned => "tuned",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub loss: LossName,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Split {
        match s {
            SplitName::Train => Split::Train,
            SplitName::Val => Split::Val,
            SplitName::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub members: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub split: Option<SplitName>,
    /// Use the last weights instead of the best validation weights.
    #[arg(long)]
    pub final_weights: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction file, optionally `NAME=FILE`; repeat for several models.
    #[arg(long, required = true)]
    pub pred: Vec<String>,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Coarsening factor used for the nearest-neighbour baseline.
    #[arg(long)]
    pub factor: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub split: SplitSpec,
    pub size: usize,
    pub factor: usize,
    pub seed: u64,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { split: SplitSpec::default(), size: 64, factor: 8, seed: 0, synth: SynthConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub members: usize,
    pub seed: u64,
    pub batch: usize,
    pub split: Split,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { members: 5, seed: 0, batch: 32, split: Split::Test }
    }
}

/// Everything a run can be configured with; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
}

/// A usage problem, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn log_resolved<T: Serialize>(what: &str, value: &T) {
    match serde_json::to_string(value) {
        Ok(s) => log::info!("resolved {what} config: {s}"),
        Err(e) => log::warn!("cannot serialize {what} config: {e}"),
    }
}

/// Apply the thread cap from the environment.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")?;
    Ok(())
}

fn generate(cfg: &RunConfig, a: &GenerateArgs) -> anyhow::Result<()> {
    let mut d = cfg.data.clone();
    set(&mut d.split.train_years, a.years);
    set(&mut d.split.val_years, a.val_years);
    set(&mut d.split.test_years, a.test_years);
    set(&mut d.size, a.size);
    set(&mut d.factor, a.factor);
    set(&mut d.seed, a.seed);
    d.split.test_extension_years = d.split.test_extension_years.min(d.split.test_years);
    d.synth.factor = d.factor;
    if d.factor == 0 || d.size == 0 || d.size % d.factor != 0 {
        return Err(usage(format!("grid size {} must be a positive multiple of the factor {}", d.size, d.factor)));
    }
    d.split.validate().map_err(|e| usage(e.to_string()))?;
    d.synth.validate().map_err(|e| usage(e.to_string()))?;
    log_resolved("data", &d);
    let full = generate_synthetic(d.split.total_years(), (d.size, d.size), d.seed, &d.synth)?;
    let m = write_dataset(&a.out, &full, d.split, d.factor, d.seed, &d.synth)?;
    log::info!("wrote {} days on a {}x{} grid to {}", full.len_time(), m.hr_size.0, m.hr_size.1, a.out.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig, a: &TrainArgs) -> anyhow::Result<()> {
    let mut t = cfg.train.clone();
    let preset = ObjectiveSpec::from_name(a.loss.name())?;
    // A config-file objective for the same loss keeps its tuning; any other is replaced by the preset.
    let same = t.objective.kind == preset.kind && (preset.kind == ObjectiveKind::Afcrps || t.objective.lambda == preset.lambda);
    if !same {
        t.objective = preset;
    }
    set(&mut t.epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.learning_rate, a.learning_rate);
    set(&mut t.seed, a.seed);
    t.validate().map_err(|e| usage(e.to_string()))?;
    log_resolved("train", &t);
    let outcome = train(&a.data, &t, &a.out)?;
    log::info!(
        "trained {} epochs ({} steps); best validation loss {} at epoch {}",
        outcome.manifest.epochs_completed,
        outcome.manifest.step,
        outcome.manifest.best_val_loss,
        outcome.manifest.best_epoch
    );
    Ok(())
}

fn sample_cmd(cfg: &RunConfig, a: &SampleArgs) -> anyhow::Result<()> {
    let mut s = cfg.sample.clone();
    set(&mut s.members, a.members);
    set(&mut s.seed, a.seed);
    set(&mut s.split, a.split.map(Split::from));
    if s.members == 0 || s.batch == 0 {
        return Err(usage("members and batch must be at least 1"));
    }
    log_resolved("sample", &s);
    let model = CheckpointDir::new(&a.ckpt).load_model(!a.final_weights)?;
    let dataset = read_manifest(&a.data)?;
    if dataset.factor != model.factor {
        bail!("checkpoint was trained with factor {} but the dataset uses {}", model.factor, dataset.factor);
    }
    let lr = read_tensor(probunet_core::data::lr_path(&a.data, s.split))?;
    let days = lr.len_time();
    if days == 0 {
        bail!("split has no days to sample");
    }
    // Members are seeded per day, so sampling in chunks matches a single pass.
    let mut writer = None;
    for start in (0..days).step_by(s.batch) {
        let chunk = lr.slice_time(start, (start + s.batch).min(days))?;
        let ens = model.sample_ensemble(&chunk, s.members, s.seed, s.batch)?;
        if writer.is_none() {
            let mut header = TensorHeader::for_tensor(&ens);
            header.shape[0] = days * s.members;
            header.time_index = lr.time_index.iter().flat_map(|&d| std::iter::repeat_n(d, s.members)).collect();
            writer = Some(TensorWriter::create(&a.out, header)?);
        }
        writer.as_mut().expect("created above").write_values(ens.values())?;
    }
    writer.expect("at least one chunk").finish()?;
    log::info!("wrote {} members for {} days to {}", s.members, lr.len_time(), a.out.display());
    Ok(())
}

fn parse_pred(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !name.contains(['/', '\\']) => (name.to_string(), PathBuf::from(path)),
        _ => {
            let p = PathBuf::from(spec);
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string());
            (name, p)
        }
    }
}

fn evaluate_cmd(cfg: &RunConfig, a: &EvaluateArgs) -> anyhow::Result<()> {
    let mut e = cfg.eval.clone();
    set(&mut e.factor, a.factor);
    set(&mut e.bootstrap, a.bootstrap);
    set(&mut e.seed, a.seed);
    if e.bootstrap < 2 || e.factor == 0 {
        return Err(usage("bootstrap must be at least 2 and factor at least 1"));
    }
    log_resolved("eval", &e);
    let truth = read_tensor(&a.truth)?;
    let preds = a
        .pred
        .iter()
        .map(|spec| {
            let (name, path) = parse_pred(spec);
            (name, Prediction::File(path))
        })
        .collect::<Vec<_>>();
    let report = build_report(&preds, &truth, &e, &a.out)?;
    for row in &report.scores {
        let crps = row.crps.map(|c| format!("{:.4} ± {:.4}", c.mean, c.std)).unwrap_or_else(|| "-".into());
        log::info!("{:>12} {:>5}  CRPS {crps:>18}  MAE {:.4} ± {:.4}", row.model, row.variable, row.mae.mean, row.mae.std);
    }
    if let Some(x) = &report.extremes {
        for c in &x.coverage {
            log::info!("coverage {:>12}: {:.3} ({}/{})", c.source, c.fraction, c.inside, c.evaluated);
        }
    }
    Ok(())
}

/// The error chain, skipping causes already spelled out by the message above them.
pub fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::GenerateData(a) => generate(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Sample(a) => sample_cmd(&cfg, a),
        Command::Evaluate(a) => evaluate_cmd(&cfg, a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_names() {
        assert_eq!(parse_pred("afcrps=/tmp/a.bin"), ("afcrps".into(), PathBuf::from("/tmp/a.bin")));
        assert_eq!(parse_pred("/tmp/run/tuned.bin"), ("tuned".into(), PathBuf::from("/tmp/run/tuned.bin")));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"epochs": 3, "bogus": 1}}"#).unwrap();
        let err = load_config(Some(&p)).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        std::fs::write(&p, r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(load_config(Some(&p)).unwrap().train.epochs, 3);
    }

    #[test]
    fn bad_loss_name_is_a_usage_error() {
        assert_eq!(run(["probunet", "train", "--data", "d", "--loss", "ce", "--out", "o"]), EXIT_USAGE);
        assert_eq!(run(["probunet", "frobnicate"]), EXIT_USAGE);
    }
}
