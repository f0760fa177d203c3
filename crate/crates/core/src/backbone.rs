//! Four-level residual U-Net mapping the upsampled coarse field to a high-resolution feature map.

use probunet_nn::{Bound, Graph, ParamStore, Real, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{Activation, Conv, Init, NormKind, ResBlock};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub levels: usize,
    pub channel_schedule: Vec<usize>,
    pub enc_blocks_per_level: usize,
    pub dec_blocks_per_level: usize,
    pub in_channels: usize,
    pub norm: NormKind,
    pub activation: Activation,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            channel_schedule: vec![64, 128, 256, 256],
            enc_blocks_per_level: 2,
            dec_blocks_per_level: 3,
            in_channels: 3,
            norm: NormKind::Group,
            activation: Activation::Silu,
        }
    }
}

impl BackboneConfig {
    /// Same topology with a narrower channel schedule, for single-CPU training runs.
    pub fn desk() -> Self {
        Self { channel_schedule: vec![4, 8, 16, 32], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels != 4 || self.channel_schedule.len() != self.levels {
            return Err(Error::Config(format!(
                "backbone needs 4 levels with one channel count each, got {} and {:?}",
                self.levels, self.channel_schedule
            )));
        }
        if self.enc_blocks_per_level != 2 || self.dec_blocks_per_level != 3 {
            return Err(Error::Config("backbone uses 2 encoder and 3 decoder blocks per level".into()));
        }
        if self.channel_schedule.iter().any(|&c| c == 0) || self.in_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.channel_schedule.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!("channel schedule {:?} must be non-decreasing", self.channel_schedule)));
        }
        Ok(())
    }

    /// Channels of the feature map handed to the fusion head.
    pub fn out_feature_channels(&self) -> usize {
        self.channel_schedule[0]
    }

    pub fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        let m = 1 << self.levels;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Config(format!("grid {h}x{w} is not divisible by {m}")));
        }
        Ok(())
    }
}

struct DecoderLevel {
    up: Conv,
    blocks: Vec<ResBlock>,
}

pub struct Backbone {
    config: BackboneConfig,
    stem: Conv,
    encoder: Vec<Vec<ResBlock>>,
    middle: Vec<ResBlock>,
    decoder: Vec<DecoderLevel>,
}

impl Backbone {
    pub fn new<T: Real>(config: BackboneConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (norm, act) = (config.norm, config.activation);
        let sched = config.channel_schedule.clone();
        let stem = Conv::new(store, "backbone.stem", (config.in_channels, sched[0], 3), 1, Init::Normal(1.0), rng);
        let mut encoder = Vec::new();
        let mut ch = sched[0];
        for (l, &c) in sched.iter().enumerate() {
            let mut blocks = Vec::new();
            for b in 0..config.enc_blocks_per_level {
                blocks.push(ResBlock::new(store, &format!("backbone.enc{l}.{b}"), (ch, c), norm, act, rng));
                ch = c;
            }
            encoder.push(blocks);
        }
        let middle = (0..config.enc_blocks_per_level)
            .map(|b| ResBlock::new(store, &format!("backbone.mid.{b}"), (ch, ch), norm, act, rng))
            .collect();
        let mut decoder = Vec::new();
        for l in (0..config.levels).rev() {
            let c = sched[l];
            let up = Conv::new(store, &format!("backbone.dec{l}.up"), (ch, c, 3), 1, Init::Normal(1.0), rng);
            let mut blocks = Vec::new();
            let mut cin = 2 * c;
            for b in 0..config.dec_blocks_per_level {
                blocks.push(ResBlock::new(store, &format!("backbone.dec{l}.{b}"), (cin, c), norm, act, rng));
                cin = c;
            }
            decoder.push(DecoderLevel { up, blocks });
            ch = c;
        }
        Ok(Self { config, stem, encoder, middle, decoder })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// `[B, C_in, H, W]` to `[B, F, H, W]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(Error::Shape(format!("backbone expects [B, {}, H, W], got {shape:?}", self.config.in_channels)));
        }
        self.config.check_grid(shape[2], shape[3])?;
        let mut h = self.stem.forward(g, p, x);
        let mut skips = Vec::new();
        for blocks in &self.encoder {
            for b in blocks {
                h = b.forward(g, p, h);
            }
            skips.push(h);
            h = g.avg_pool2(h);
        }
        for b in &self.middle {
            h = b.forward(g, p, h);
        }
        for level in &self.decoder {
            h = g.upsample_nearest(h, 2);
            h = level.up.forward(g, p, h);
            let skip = skips.pop().expect("one skip per level");
            h = g.concat_channels(&[h, skip]);
            for b in &level.blocks {
                h = b.forward(g, p, h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use probunet_nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(cfg: BackboneConfig) -> (Backbone, ParamStore<f32>) {
        let mut store = ParamStore::new();
        let net = Backbone::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (net, store)
    }

    #[test]
    fn default_config_is_the_full_width_network() {
        let cfg = BackboneConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.channel_schedule, [64, 128, 256, 256]);
        assert_eq!(cfg.out_feature_channels(), 64);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            BackboneConfig { levels: 3, ..BackboneConfig::default() },
            BackboneConfig { enc_blocks_per_level: 1, ..BackboneConfig::default() },
            BackboneConfig { channel_schedule: vec![64, 32, 256, 256], ..BackboneConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn output_keeps_the_input_grid() {
        let (net, store) = build(BackboneConfig { channel_schedule: vec![4, 4, 8, 8], ..BackboneConfig::default() });
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::full(&[2, 3, 32, 16], 0.5f32));
        let y = net.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 32, 16]);
    }

    #[test]
    fn indivisible_grid_is_a_configuration_error() {
        let (net, store) = build(BackboneConfig { channel_schedule: vec![4, 4, 4, 4], ..BackboneConfig::default() });
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[1, 3, 24, 32]));
        assert!(matches!(net.forward(&mut g, &p, x), Err(Error::Config(_))));
    }
}
