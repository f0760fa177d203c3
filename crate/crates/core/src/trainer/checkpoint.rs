//! Checkpoint directory: `manifest.json`, `weights.bin`, `best_weights.bin`,
//! `optimizer.bin` and `train_log.csv`.
//!
//! Array files hold one JSON header line followed by little-endian payloads in header order.

use std::path::{Path, PathBuf};

use probunet_nn::{Adam, AdamConfig, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::data::NormStats;
use crate::losses::ObjectiveSpec;
use crate::probunet::{Model, ModelConfig, ProbUNet};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const BEST_WEIGHTS_FILE: &str = "best_weights.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const LOG_FILE: &str = "train_log.csv";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHash {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub objective: ObjectiveSpec,
    pub train: TrainConfig,
    pub norm: NormStats,
    pub factor: usize,
    pub hr_size: (usize, usize),
    pub epochs_completed: usize,
    pub step: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub parameters: usize,
    pub files: Vec<FileHash>,
    /// Hash over the per-file hashes, identifying the checkpoint content.
    pub content_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayHeader {
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step: Option<u64>,
    arrays: Vec<ArrayEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn with_header(header: &ArrayHeader, payload: Vec<u8>) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.extend(payload);
    Ok(out)
}

fn split_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(ArrayHeader, &'a [u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader(format!("{} has no header line", path.display())))?;
    Ok((serde_json::from_slice(&bytes[..nl])?, &bytes[nl + 1..]))
}

pub fn encode_weights(params: &ParamStore<f32>) -> Result<Vec<u8>> {
    let header = ArrayHeader {
        dtype: "float32-le".into(),
        step: None,
        arrays: params.iter().map(|(n, t)| ArrayEntry { name: n.to_string(), shape: t.shape().to_vec() }).collect(),
    };
    let payload = params.iter().flat_map(|(_, t)| t.data().iter().flat_map(|v| v.to_le_bytes())).collect();
    with_header(&header, payload)
}

/// Overwrite every tensor of `params` from an encoded weight file; names and shapes must match.
pub fn decode_weights_into(bytes: &[u8], path: &Path, params: &mut ParamStore<f32>) -> Result<()> {
    let (header, mut payload) = split_header(bytes, path)?;
    if header.dtype != "float32-le" {
        return Err(Error::Dtype(header.dtype));
    }
    if header.arrays.len() != params.len() {
        return Err(Error::MalformedHeader(format!(
            "{} holds {} tensors, the architecture has {}",
            path.display(),
            header.arrays.len(),
            params.len()
        )));
    }
    for (entry, id) in header.arrays.iter().zip(params.ids().collect::<Vec<_>>()) {
        if params.name(id) != entry.name || params.get(id).shape() != entry.shape.as_slice() {
            return Err(Error::MalformedHeader(format!(
                "tensor {} {:?} does not match architecture tensor {} {:?}",
                entry.name,
                entry.shape,
                params.name(id),
                params.get(id).shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        if payload.len() < 4 * n {
            return Err(Error::TruncatedPayload { expected: 4 * n as u64, found: payload.len() as u64 });
        }
        let (head, rest) = payload.split_at(4 * n);
        let data = head.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        *params.get_mut(id) = Tensor::new(&entry.shape, data);
        payload = rest;
    }
    if !payload.is_empty() {
        return Err(Error::MalformedHeader(format!("{} has {} trailing bytes", path.display(), payload.len())));
    }
    Ok(())
}

pub fn encode_optimizer(opt: &Adam, params: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut arrays = Vec::new();
    let mut payload = Vec::new();
    for (kind, moments) in [("m", &opt.m), ("v", &opt.v)] {
        for ((name, t), values) in params.iter().zip(moments) {
            arrays.push(ArrayEntry { name: format!("{kind}.{name}"), shape: t.shape().to_vec() });
            payload.extend(values.iter().flat_map(|v| v.to_le_bytes()));
        }
    }
    with_header(&ArrayHeader { dtype: "float64-le".into(), step: Some(opt.step), arrays }, payload)
}

pub fn decode_optimizer(bytes: &[u8], path: &Path, config: AdamConfig, params: &ParamStore<f32>) -> Result<Adam> {
    let (header, payload) = split_header(bytes, path)?;
    if header.dtype != "float64-le" {
        return Err(Error::Dtype(header.dtype));
    }
    let mut opt = Adam::new(config, params);
    opt.step = header.step.unwrap_or(0);
    let expected: usize = 2 * params.numel();
    if header.arrays.len() != 2 * params.len() || payload.len() != 8 * expected {
        return Err(Error::MalformedHeader(format!("{} does not match the architecture", path.display())));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for moments in [&mut opt.m, &mut opt.v] {
        for m in moments.iter_mut() {
            for v in m.iter_mut() {
                *v = values.next().expect("length checked");
            }
        }
    }
    Ok(opt)
}

/// Paths of a checkpoint directory.
#[derive(Debug, Clone)]
pub struct CheckpointDir {
    pub dir: PathBuf,
}

impl CheckpointDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn exists(&self) -> bool {
        self.path(MANIFEST_FILE).is_file()
    }

    fn read(&self, file: &str) -> Result<Vec<u8>> {
        let p = self.path(file);
        if !p.exists() {
            return Err(Error::MissingCheckpoint(p));
        }
        std::fs::read(&p).map_err(|e| Error::io(&p, e))
    }

    fn write(&self, file: &str, bytes: &[u8]) -> Result<FileHash> {
        let p = self.path(file);
        let tmp = self.path(&format!("{file}.tmp"));
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &p).map_err(|e| Error::io(&p, e))?;
        Ok(FileHash { file: file.to_string(), sha256: sha256_hex(bytes) })
    }

    pub fn read_manifest(&self) -> Result<CheckpointManifest> {
        let bytes = self.read(MANIFEST_FILE)?;
        let m: CheckpointManifest = serde_json::from_slice(&bytes)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::MalformedHeader(format!("unsupported checkpoint format {}", m.format_version)));
        }
        Ok(m)
    }

    /// Read `file` and check it against the hash recorded in the manifest.
    fn read_verified(&self, manifest: &CheckpointManifest, file: &str) -> Result<Vec<u8>> {
        let bytes = self.read(file)?;
        let recorded = manifest
            .files
            .iter()
            .find(|f| f.file == file)
            .ok_or_else(|| Error::MalformedHeader(format!("manifest does not list {file}")))?;
        if sha256_hex(&bytes) != recorded.sha256 {
            return Err(Error::MalformedHeader(format!("{file} does not match its recorded hash")));
        }
        Ok(bytes)
    }

    /// Write weights, optimizer state and log, then the manifest that seals them.
    pub(crate) fn save(&self, state: &SavedState<'_>, mut manifest: CheckpointManifest) -> Result<CheckpointManifest> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let files = vec![
            self.write(WEIGHTS_FILE, &encode_weights(state.params)?)?,
            self.write(BEST_WEIGHTS_FILE, &encode_weights(state.best)?)?,
            self.write(OPTIMIZER_FILE, &encode_optimizer(state.optimizer, state.params)?)?,
            self.write(LOG_FILE, state.log_csv.as_bytes())?,
        ];
        let joined: String = files.iter().map(|f| format!("{}  {}\n", f.sha256, f.file)).collect();
        manifest.content_hash = sha256_hex(joined.as_bytes());
        manifest.files = files;
        self.write(MANIFEST_FILE, (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())?;
        Ok(manifest)
    }

    fn fresh_params(manifest: &CheckpointManifest) -> Result<(ProbUNet, ParamStore<f32>)> {
        ProbUNet::new::<f32>(manifest.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Load a model; `best` selects the weights with the lowest validation loss.
    pub fn load_model(&self, best: bool) -> Result<Model> {
        let manifest = self.read_manifest()?;
        let (net, mut params) = Self::fresh_params(&manifest)?;
        let file = if best { BEST_WEIGHTS_FILE } else { WEIGHTS_FILE };
        let bytes = self.read_verified(&manifest, file)?;
        decode_weights_into(&bytes, &self.path(file), &mut params)?;
        Ok(Model { net, params, norm: manifest.norm, factor: manifest.factor })
    }

    /// Everything needed to continue training.
    pub fn load_state(&self) -> Result<LoadedState> {
        let manifest = self.read_manifest()?;
        let (net, mut params) = Self::fresh_params(&manifest)?;
        let mut best = params.clone();
        let bytes = self.read_verified(&manifest, WEIGHTS_FILE)?;
        decode_weights_into(&bytes, &self.path(WEIGHTS_FILE), &mut params)?;
        let bytes = self.read_verified(&manifest, BEST_WEIGHTS_FILE)?;
        decode_weights_into(&bytes, &self.path(BEST_WEIGHTS_FILE), &mut best)?;
        let bytes = self.read_verified(&manifest, OPTIMIZER_FILE)?;
        let optimizer = decode_optimizer(&bytes, &self.path(OPTIMIZER_FILE), manifest.train.adam(), &params)?;
        let log = String::from_utf8(self.read_verified(&manifest, LOG_FILE)?)
            .map_err(|e| Error::MalformedHeader(format!("{LOG_FILE}: {e}")))?;
        Ok(LoadedState { manifest, net, params, best, optimizer, log_csv: log })
    }
}

pub(crate) struct SavedState<'a> {
    pub params: &'a ParamStore<f32>,
    pub best: &'a ParamStore<f32>,
    pub optimizer: &'a Adam,
    pub log_csv: &'a str,
}

pub struct LoadedState {
    pub manifest: CheckpointManifest,
    pub net: ProbUNet,
    pub params: ParamStore<f32>,
    pub best: ParamStore<f32>,
    pub optimizer: Adam,
    pub log_csv: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip_bit_exactly() {
        let (_, params) = ProbUNet::new::<f32>(ModelConfig::desk(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let bytes = encode_weights(&params).unwrap();
        let (_, mut other) = ProbUNet::new::<f32>(ModelConfig::desk(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        decode_weights_into(&bytes, Path::new("w"), &mut other).unwrap();
        for ((_, a), (_, b)) in params.iter().zip(other.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let (_, params) = ProbUNet::new::<f32>(ModelConfig::desk(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let bytes = encode_weights(&params).unwrap();
        let mut cfg = ModelConfig::desk();
        cfg.probunet.latent_dim = 8;
        let (_, mut other) = ProbUNet::new::<f32>(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(decode_weights_into(&bytes, Path::new("w"), &mut other).is_err());
    }

    #[test]
    fn optimizer_round_trip() {
        let (_, params) = ProbUNet::new::<f32>(ModelConfig::desk(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &params);
        opt.step = 7;
        opt.m[0][0] = 0.25;
        opt.v[1][0] = 1e-9;
        let bytes = encode_optimizer(&opt, &params).unwrap();
        let back = decode_optimizer(&bytes, Path::new("o"), AdamConfig::default(), &params).unwrap();
        assert_eq!((back.step, &back.m, &back.v), (7, &opt.m, &opt.v));
    }
}
