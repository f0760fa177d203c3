//! Statistical downscaling with a probabilistic U-Net.

pub mod backbone;
pub mod constraints;
pub mod data;
pub mod diagnostics;
mod error;
pub mod extremes;
pub mod layers;
pub mod losses;
pub mod probunet;
pub mod seed;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
