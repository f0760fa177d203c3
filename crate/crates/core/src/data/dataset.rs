//! On-disk dataset layout: `{train,val,test}_{hr,lr}.bin` tensor files plus `stats.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{coarsen, read_tensor, write_tensor, FieldTensor, NormStats, SplitSpec, SynthConfig};
use crate::{Error, Result};

pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Everything needed to interpret a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub norm: NormStats,
    pub split: SplitSpec,
    pub factor: usize,
    pub hr_size: (usize, usize),
    pub seed: u64,
    pub synth: SynthConfig,
}

pub fn hr_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}_hr.bin", split.name()))
}

pub fn lr_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}_lr.bin", split.name()))
}

/// Split `full`, coarsen every split, fit normalization on the training split, write everything.
pub fn write_dataset(
    dir: &Path,
    full: &FieldTensor,
    split: SplitSpec,
    factor: usize,
    seed: u64,
    synth: &SynthConfig,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let parts = split.apply(full)?;
    let norm = NormStats::from_training(&parts.train)?;
    for (s, t) in [(Split::Train, &parts.train), (Split::Val, &parts.val), (Split::Test, &parts.test)] {
        write_tensor(hr_path(dir, s), t)?;
        write_tensor(lr_path(dir, s), &coarsen(t, factor)?)?;
    }
    let manifest = DatasetManifest { norm, split, factor, hr_size: full.grid_size(), seed, synth: synth.clone() };
    let path = dir.join(STATS_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(STATS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// High- and low-resolution tensors of one split.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub split: Split,
    pub hr: FieldTensor,
    pub lr: FieldTensor,
}

impl SplitData {
    pub fn new(split: Split, hr: FieldTensor, lr: FieldTensor) -> Result<Self> {
        if hr.time_index != lr.time_index {
            return Err(Error::Misaligned(format!("{} high- and low-resolution time axes differ", split.name())));
        }
        Ok(Self { split, hr, lr })
    }

    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        Self::new(split, read_tensor(hr_path(dir, split))?, read_tensor(lr_path(dir, split))?)
    }

    pub fn len(&self) -> usize {
        self.hr.len_time()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
