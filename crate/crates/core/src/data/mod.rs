//! Climate field tensors, synthetic generation, regridding, normalization and file I/O.

mod dataset;
mod field;
mod format;
mod grid;
mod norm;
mod split;
mod synth;

pub use dataset::{hr_path, lr_path, read_manifest, write_dataset, DatasetManifest, Split, SplitData, STATS_FILE};
pub use field::{FieldTensor, PR, SYNTHETIC_EPOCH, TMAX, TMIN, UNITS, VAR_NAMES};
pub use format::{read_tensor, write_tensor, TensorHeader, TensorReader, TensorWriter, DTYPE};
pub use grid::{coarsen, upsample_nn};
pub use norm::NormStats;
pub use split::{SplitSpec, Splits, DAYS_PER_YEAR};
pub use synth::{generate_synthetic, GaussianField, SynthConfig};
