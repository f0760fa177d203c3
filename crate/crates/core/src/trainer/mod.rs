//! Optimization loop with validation tracking, checkpoints and resumption.

mod checkpoint;

use std::path::Path;

use probunet_nn::{clip_grad_norm, Adam, AdamConfig, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{read_manifest, NormStats, Split, SplitData};
use crate::losses::{recon_objective, training_objective, Batch, LatentSource, ObjectiveSpec};
use crate::probunet::{prepare_input, Model, ModelConfig, ProbUNet};
use crate::{seed, Error, Result};

pub use checkpoint::{
    decode_optimizer, decode_weights_into, encode_optimizer, encode_weights, CheckpointDir, CheckpointManifest,
    FileHash, LoadedState, BEST_WEIGHTS_FILE, FORMAT_VERSION, LOG_FILE, MANIFEST_FILE, OPTIMIZER_FILE, WEIGHTS_FILE,
};

pub const LOG_HEADER: &str = "step,epoch,recon_loss,kl,gamma,val_loss";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub objective: ObjectiveSpec,
    pub model: ModelConfig,
    /// Batch size for the gradient-free validation pass.
    pub val_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            seed: 0,
            objective: ObjectiveSpec::afcrps(),
            model: ModelConfig::desk(),
            val_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.val_batch_size == 0 {
            return Err(Error::Config("epochs and batch sizes must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        self.objective.validate()?;
        self.model.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

/// One optimizer step as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub recon_loss: f64,
    pub kl: f64,
    pub gamma: f64,
    /// Set on the last step of each epoch.
    pub val_loss: Option<f64>,
}

impl StepRecord {
    fn csv_row(&self) -> String {
        let val = self.val_loss.map(|v| format!("{v}")).unwrap_or_default();
        format!("{},{},{},{},{},{}\n", self.step, self.epoch, self.recon_loss, self.kl, self.gamma, val)
    }
}

/// Parse the training log back into records.
pub fn parse_log(csv_text: &str) -> Result<Vec<StepRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
    let bad = |e: &dyn std::fmt::Display| Error::MalformedHeader(format!("{LOG_FILE}: {e}"));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| bad(&e))?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let num = |i: usize| f(i).parse::<f64>().map_err(|e| bad(&e));
        out.push(StepRecord {
            step: f(0).parse().map_err(|e| bad(&e))?,
            epoch: f(1).parse().map_err(|e| bad(&e))?,
            recon_loss: num(2)?,
            kl: num(3)?,
            gamma: num(4)?,
            val_loss: if f(5).is_empty() { None } else { Some(num(5)?) },
        });
    }
    Ok(out)
}

/// Observes which samples each pass reads; `gradient` is true for optimizer batches.
pub trait BatchObserver {
    fn on_batch(&mut self, split: Split, indices: &[usize], gradient: bool);
}

impl BatchObserver for () {
    fn on_batch(&mut self, _: Split, _: &[usize], _: bool) {}
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub manifest: CheckpointManifest,
    pub log: Vec<StepRecord>,
}

impl TrainOutcome {
    /// Validation loss after each epoch, in order.
    pub fn val_losses(&self) -> Vec<f64> {
        self.log.iter().filter_map(|r| r.val_loss).collect()
    }
}

/// Training order of `n` samples for `epoch`.
pub fn epoch_order(seed_value: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed_value, &[0x7368_7566, epoch as u64]));
    idx
}

fn normal_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
}

fn make_batch(data: &SplitData, indices: &[usize], factor: usize, norm: &NormStats) -> Result<Batch<f32>> {
    let lr = data.lr.select_time(indices);
    let hr = data.hr.select_time(indices);
    Ok(Batch { x_up: prepare_input(&lr, factor, norm)?, y: Model::target(&hr) })
}

/// Mean reconstruction loss over the validation split with prior latent draws.
///
/// Noise is fixed per validation batch so epochs are compared on equal footing.
pub fn validation_loss(
    net: &ProbUNet,
    params: &ParamStore<f32>,
    data: &SplitData,
    config: &TrainConfig,
    norm: &NormStats,
    factor: usize,
    observer: &mut dyn BatchObserver,
) -> Result<f64> {
    let n = data.len();
    let l = net.config().probunet.latent_dim;
    let (mut total, mut count) = (0.0, 0usize);
    for (b, start) in (0..n).step_by(config.val_batch_size).enumerate() {
        let indices: Vec<usize> = (start..n.min(start + config.val_batch_size)).collect();
        observer.on_batch(data.split, &indices, false);
        let batch = make_batch(data, &indices, factor, norm)?;
        let mut rng = seed::rng(config.seed, &[0x76616c, b as u64]);
        let eps: Vec<_> = (0..config.objective.samples()).map(|_| normal_tensor(&mut rng, &[indices.len(), l])).collect();
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let loss = recon_objective(&mut g, &p, net, &batch, &config.objective, norm, &eps, LatentSource::Prior)?;
        total += g.scalar(loss) * indices.len() as f64;
        count += indices.len();
    }
    if count == 0 {
        return Err(Error::Config("validation split is empty".into()));
    }
    Ok(total / count as f64)
}

/// Train on `data_dir`, writing a checkpoint to `out`.
///
/// If `out` already holds a checkpoint for the same configuration, training resumes after
/// its last completed epoch; the trajectory matches an uninterrupted run.
pub fn train(data_dir: &Path, config: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    train_observed(data_dir, config, out, &mut ())
}

pub fn train_observed(
    data_dir: &Path,
    config: &TrainConfig,
    out: &Path,
    observer: &mut dyn BatchObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = read_manifest(data_dir)?;
    let (factor, norm) = (dataset.factor, dataset.norm.clone());
    config.model.backbone.check_grid(dataset.hr_size.0, dataset.hr_size.1)?;
    if config.objective.kind == crate::losses::ObjectiveKind::WmseMsssim && config.objective.lambda < 1.0 {
        config.objective.msssim.check_size(dataset.hr_size.0, dataset.hr_size.1)?;
    }
    let train_data = SplitData::load(data_dir, Split::Train)?;
    let val_data = SplitData::load(data_dir, Split::Val)?;
    if train_data.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }

    let ckpt = CheckpointDir::new(out);
    let (net, mut params, mut best, mut opt, mut log_csv, mut manifest) = if ckpt.exists() {
        let s = ckpt.load_state()?;
        let mut resumable = s.manifest.train.clone();
        resumable.epochs = config.epochs;
        if &resumable != config || s.manifest.norm != norm {
            return Err(Error::Config(format!(
                "{} holds a checkpoint for a different configuration or dataset",
                out.display()
            )));
        }
        log::info!("resuming after epoch {} (step {})", s.manifest.epochs_completed, s.manifest.step);
        (s.net, s.params, s.best, s.optimizer, s.log_csv, s.manifest)
    } else {
        let mut rng = seed::rng(config.seed, &[0x696e6974]);
        let (net, params) = ProbUNet::new::<f32>(config.model.clone(), &mut rng)?;
        let opt = Adam::new(config.adam(), &params);
        let manifest = CheckpointManifest {
            format_version: FORMAT_VERSION,
            model: config.model.clone(),
            objective: config.objective.clone(),
            train: config.clone(),
            norm: norm.clone(),
            factor,
            hr_size: dataset.hr_size,
            epochs_completed: 0,
            step: 0,
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
            parameters: params.numel(),
            files: Vec::new(),
            content_hash: String::new(),
        };
        (net, params.clone(), params, opt, format!("{LOG_HEADER}\n"), manifest)
    };
    manifest.train = config.clone();

    let l = config.model.probunet.latent_dim;
    let mut step = manifest.step;
    for epoch in manifest.epochs_completed + 1..=config.epochs {
        let order = epoch_order(config.seed, epoch, train_data.len());
        let chunks: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        let mut records = Vec::with_capacity(chunks.len());
        for indices in &chunks {
            observer.on_batch(Split::Train, indices, true);
            let batch = make_batch(&train_data, indices, factor, &norm)?;
            let mut rng = seed::rng(config.seed, &[0x73746570, step]);
            let eps: Vec<_> =
                (0..config.objective.samples()).map(|_| normal_tensor(&mut rng, &[indices.len(), l])).collect();
            let mut g = Graph::new();
            let p = params.bind(&mut g, true);
            let parts = training_objective(&mut g, &p, &net, &batch, &config.objective, &norm, step, &eps)?;
            let (total, recon, kl) = (g.scalar(parts.total), g.scalar(parts.recon), g.scalar(parts.kl));
            if !total.is_finite() || !recon.is_finite() || !kl.is_finite() {
                let value = if total.is_finite() { if recon.is_finite() { kl } else { recon } } else { total };
                log::error!("non-finite loss at step {step} (epoch {epoch}): recon={recon} kl={kl}");
                return Err(Error::NonFiniteLoss { step, value });
            }
            let mut grads = g.backward(parts.total);
            let mut grads = params.collect_grads(&p, &mut grads);
            let norm_before = clip_grad_norm(&mut grads, config.clip_norm);
            if !norm_before.is_finite() {
                return Err(Error::NonFiniteLoss { step, value: norm_before });
            }
            opt.update(&mut params, &grads);
            step += 1;
            records.push(StepRecord { step, epoch, recon_loss: recon, kl, gamma: parts.gamma, val_loss: None });
        }
        let val = validation_loss(&net, &params, &val_data, config, &norm, factor, observer)?;
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss { step, value: val });
        }
        if let Some(last) = records.last_mut() {
            last.val_loss = Some(val);
        }
        let train_mean = records.iter().map(|r| r.recon_loss).sum::<f64>() / records.len() as f64;
        log::info!("epoch {epoch}/{}: train recon {train_mean:.5}, val {val:.5}", config.epochs);
        for r in &records {
            log_csv.push_str(&r.csv_row());
        }
        if val < manifest.best_val_loss {
            manifest.best_val_loss = val;
            manifest.best_epoch = epoch;
            best = params.clone();
        }
        manifest.epochs_completed = epoch;
        manifest.step = step;
        let state = checkpoint::SavedState { params: &params, best: &best, optimizer: &opt, log_csv: &log_csv };
        manifest = ckpt.save(&state, manifest)?;
    }
    if manifest.files.is_empty() {
        let state = checkpoint::SavedState { params: &params, best: &best, optimizer: &opt, log_csv: &log_csv };
        manifest = ckpt.save(&state, manifest)?;
    }
    let log = parse_log(&log_csv)?;
    Ok(TrainOutcome { manifest, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(5, 1, 100);
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(5, 1, 100));
        assert_ne!(a, epoch_order(5, 2, 100));
    }

    #[test]
    fn log_rows_parse_back() {
        let rows = [
            StepRecord { step: 1, epoch: 1, recon_loss: 0.5, kl: 0.25, gamma: 0.0, val_loss: None },
            StepRecord { step: 2, epoch: 1, recon_loss: 0.125, kl: 1e-9, gamma: 5e-5, val_loss: Some(0.3) },
        ];
        let text: String = std::iter::once(format!("{LOG_HEADER}\n")).chain(rows.iter().map(StepRecord::csv_row)).collect();
        assert_eq!(parse_log(&text).unwrap(), rows);
    }

    #[test]
    fn invalid_train_configs_are_rejected() {
        for cfg in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        TrainConfig::default().validate().unwrap();
    }
}
