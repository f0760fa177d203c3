//! Probabilistic U-Net: backbone, prior/posterior latent encoders, latent fusion head,
//! KL regularization and ensemble sampling.

use probunet_nn::{Bound, Graph, ParamStore, Real, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::constraints::{apply_graph, repair_rounding, ConstraintConfig};
use crate::data::{upsample_nn, FieldTensor, NormStats, TMAX, TMIN};
use crate::layers::{Activation, Conv, Init};
use crate::{seed, Error, Result};

pub const LOG_STD_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbUNetConfig {
    pub latent_dim: usize,
    pub fusion_convs: usize,
    pub fusion_hidden: usize,
    pub encoder_channels: Vec<usize>,
    pub gamma_max: f64,
    pub warmup_steps: u64,
}

impl Default for ProbUNetConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            fusion_convs: 3,
            fusion_hidden: 64,
            encoder_channels: vec![32, 64, 128, 256],
            gamma_max: 1e-2,
            warmup_steps: 200,
        }
    }
}

impl ProbUNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.fusion_hidden == 0 {
            return Err(Error::Config("latent_dim and fusion_hidden must be positive".into()));
        }
        if self.fusion_convs != 3 {
            return Err(Error::Config(format!("fusion head has 3 convolutions, got {}", self.fusion_convs)));
        }
        if self.encoder_channels.len() != 4 || self.encoder_channels.contains(&0) {
            return Err(Error::Config(format!("latent encoder needs 4 positive stages, got {:?}", self.encoder_channels)));
        }
        if !(self.gamma_max >= 0.0) || !self.gamma_max.is_finite() {
            return Err(Error::Config(format!("gamma_max must be finite and >= 0, got {}", self.gamma_max)));
        }
        Ok(())
    }

    /// KL weight: linear warm-up to `gamma_max`, then constant.
    pub fn kl_weight(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.gamma_max;
        }
        self.gamma_max * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub probunet: ProbUNetConfig,
    pub constraints: ConstraintConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { backbone: BackboneConfig::default(), probunet: ProbUNetConfig::default(), constraints: ConstraintConfig::default() }
    }
}

impl ModelConfig {
    /// Narrow variant that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            backbone: BackboneConfig::desk(),
            probunet: ProbUNetConfig { fusion_hidden: 16, encoder_channels: vec![8, 16, 32, 32], ..Default::default() },
            constraints: ConstraintConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.probunet.validate()?;
        self.constraints.validate()?;
        if self.backbone.in_channels != 3 {
            return Err(Error::Config("the constraint layer needs exactly (pr, tmin, tmax) channels".into()));
        }
        Ok(())
    }
}

/// Graph handles for an axis-aligned Gaussian, each `[B, L]`.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mean: Var,
    pub log_std: Var,
}

/// Concrete per-sample Gaussian over the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Tensor<f64>,
    pub log_std: Tensor<f64>,
}

impl LatentGaussian {
    pub fn new(mean: Tensor<f64>, log_std: Tensor<f64>) -> Result<Self> {
        if mean.shape() != log_std.shape() || mean.shape().len() != 2 {
            return Err(Error::Shape(format!("mean {:?} vs log_std {:?}", mean.shape(), log_std.shape())));
        }
        if !log_std.is_finite() || !mean.is_finite() {
            return Err(Error::Invalid("latent parameters must be finite".into()));
        }
        let log_std = log_std.map(|v| v.clamp(-LOG_STD_LIMIT, LOG_STD_LIMIT));
        Ok(Self { mean, log_std })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Tensor<f64> {
        let eps = Tensor::new(self.mean.shape(), (0..self.mean.numel()).map(|_| rng.sample(StandardNormal)).collect());
        reparameterize_values(&self.mean, &self.log_std, &eps)
    }
}

fn reparameterize_values<T: Real>(mean: &Tensor<T>, log_std: &Tensor<T>, eps: &Tensor<T>) -> Tensor<T> {
    let mut g = Graph::new();
    let lat = LatentVars { mean: g.constant(mean.clone()), log_std: g.constant(log_std.clone()) };
    let e = g.constant(eps.clone());
    let z = reparameterize(&mut g, lat, e);
    g.value(z).clone()
}

/// `z = mean + exp(log_std) * eps`.
pub fn reparameterize<T: Real>(g: &mut Graph<T>, lat: LatentVars, eps: Var) -> Var {
    let std = g.exp(lat.log_std);
    let s = g.mul(std, eps);
    g.add(lat.mean, s)
}

/// Elementwise `KL(q || p)`, shape `[B, L]`; exactly zero when `q == p`.
pub fn kl_elements<T: Real>(g: &mut Graph<T>, q: LatentVars, p: LatentVars) -> Var {
    let d = g.sub(q.log_std, p.log_std);
    let d2 = g.scale(d, 2.0);
    let ratio = g.exp(d2);
    let dm = g.sub(q.mean, p.mean);
    let dm2 = g.square(dm);
    let lp2 = g.scale(p.log_std, -2.0);
    let inv = g.exp(lp2);
    let maha = g.mul(dm2, inv);
    let s = g.add(ratio, maha);
    let s = g.add_scalar(s, -1.0);
    let s = g.scale(s, 0.5);
    g.sub(s, d)
}

/// Batch mean of the per-sample KL summed over latent dimensions.
pub fn kl_mean<T: Real>(g: &mut Graph<T>, q: LatentVars, p: LatentVars) -> Var {
    let b = g.shape(q.mean)[0];
    let e = kl_elements(g, q, p);
    let s = g.sum(e);
    g.scale(s, 1.0 / b as f64)
}

/// Per-sample KL divergence summed over latent dimensions.
pub fn kl_divergence(q: &LatentGaussian, p: &LatentGaussian) -> Result<Vec<f64>> {
    if q.mean.shape() != p.mean.shape() {
        return Err(Error::Shape(format!("q {:?} vs p {:?}", q.mean.shape(), p.mean.shape())));
    }
    let mut g = Graph::new();
    let qv = LatentVars { mean: g.constant(q.mean.clone()), log_std: g.constant(q.log_std.clone()) };
    let pv = LatentVars { mean: g.constant(p.mean.clone()), log_std: g.constant(p.log_std.clone()) };
    let e = kl_elements(&mut g, qv, pv);
    let (_, l) = q.mean.dims2();
    Ok(g.value(e).data().chunks(l).map(|row| row.iter().sum()).collect())
}

/// Strided convolutional encoder producing a latent Gaussian.
pub struct LatentEncoder {
    stages: Vec<Conv>,
    mean_head: Conv,
    log_std_head: Conv,
    act: Activation,
    latent_dim: usize,
}

impl LatentEncoder {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        cfg: &ProbUNetConfig,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut cin = in_channels;
        let mut stages = Vec::new();
        for (i, &c) in cfg.encoder_channels.iter().enumerate() {
            stages.push(Conv::new(store, &format!("{name}.stage{i}"), (cin, c, 3), 2, Init::Normal(std::f64::consts::SQRT_2), rng));
            cin = c;
        }
        let l = cfg.latent_dim;
        Self {
            stages,
            mean_head: Conv::new(store, &format!("{name}.mean"), (cin, l, 1), 1, Init::Zero, rng),
            log_std_head: Conv::new(store, &format!("{name}.log_std"), (cin, l, 1), 1, Init::Zero, rng),
            act,
            latent_dim: l,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> LatentVars {
        let mut h = x;
        for s in &self.stages {
            h = s.forward(g, p, h);
            h = self.act.apply(g, h);
        }
        let pooled = g.mean_spatial(h);
        let (b, c) = g.value(pooled).dims2();
        let pooled = g.reshape(pooled, &[b, c, 1, 1]);
        let mean = self.mean_head.forward(g, p, pooled);
        let mean = g.reshape(mean, &[b, self.latent_dim]);
        let log_std = self.log_std_head.forward(g, p, pooled);
        let log_std = g.reshape(log_std, &[b, self.latent_dim]);
        let log_std = g.clamp(log_std, -LOG_STD_LIMIT, LOG_STD_LIMIT);
        LatentVars { mean, log_std }
    }
}

pub struct ProbUNet {
    config: ModelConfig,
    backbone: Backbone,
    prior: LatentEncoder,
    posterior: LatentEncoder,
    fusion: Vec<Conv>,
}

impl ProbUNet {
    /// Architecture plus freshly initialized parameters.
    pub fn new<T: Real>(config: ModelConfig, rng: &mut impl Rng) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let backbone = Backbone::new(config.backbone.clone(), &mut store, rng)?;
        let (c, act) = (config.backbone.in_channels, config.backbone.activation);
        let prior = LatentEncoder::new(&mut store, "prior", c, &config.probunet, act, rng);
        let posterior = LatentEncoder::new(&mut store, "posterior", 2 * c, &config.probunet, act, rng);
        let f = config.backbone.out_feature_channels() + config.probunet.latent_dim;
        let hid = config.probunet.fusion_hidden;
        let gain = std::f64::consts::SQRT_2;
        let fusion = vec![
            Conv::new(&mut store, "fusion.0", (f, hid, 1), 1, Init::Normal(gain), rng),
            Conv::new(&mut store, "fusion.1", (hid, hid, 1), 1, Init::Normal(gain), rng),
            Conv::new(&mut store, "fusion.2", (hid, c, 1), 1, Init::Zero, rng),
        ];
        Ok((Self { config, backbone, prior, posterior, fusion }, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn features<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x_up: Var) -> Result<Var> {
        self.backbone.forward(g, p, x_up)
    }

    pub fn prior<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x_up: Var) -> LatentVars {
        self.prior.forward(g, p, x_up)
    }

    pub fn posterior<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x_up: Var, y: Var) -> LatentVars {
        let xy = g.concat_channels(&[x_up, y]);
        self.posterior.forward(g, p, xy)
    }

    /// Fusion head output: the residual added to the upsampled input.
    pub fn residual<T: Real>(&self, g: &mut Graph<T>, p: &Bound, features: Var, z: Var) -> Var {
        let s = g.shape(features).to_vec();
        let zmap = g.broadcast_spatial(z, s[2], s[3]);
        let mut h = g.concat_channels(&[features, zmap]);
        let last = self.fusion.len() - 1;
        for (i, conv) in self.fusion.iter().enumerate() {
            h = conv.forward(g, p, h);
            if i < last {
                h = self.config.backbone.activation.apply(g, h);
            }
        }
        h
    }

    /// Prediction in normalized space: upsampled input plus residual.
    pub fn fuse_and_decode<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x_up: Var, features: Var, z: Var) -> Var {
        let r = self.residual(g, p, features, z);
        g.add(x_up, r)
    }
}

/// Normalized prediction to constrained physical units:
/// denormalize, turn the third channel into the `tmax - tmin` gap, apply constraints.
pub fn to_physical<T: Real>(g: &mut Graph<T>, pred: Var, norm: &NormStats, cfg: &ConstraintConfig) -> Var {
    let phys = g.channel_affine(pred, &norm.std, &norm.mean);
    let pr = g.slice_channels(phys, 0, 1);
    let tmin = g.slice_channels(phys, TMIN, 1);
    let tmax = g.slice_channels(phys, TMAX, 1);
    let gap = g.sub(tmax, tmin);
    let raw = g.concat_channels(&[pr, tmin, gap]);
    apply_graph(g, raw, cfg)
}

/// Physical values to the normalized network space.
pub fn normalize_graph<T: Real>(g: &mut Graph<T>, x: Var, norm: &NormStats) -> Var {
    let scale: Vec<f64> = norm.std.iter().map(|s| 1.0 / s).collect();
    let shift: Vec<f64> = norm.mean.iter().zip(&norm.std).map(|(m, s)| -m / s).collect();
    g.channel_affine(x, &scale, &shift)
}

/// Trained network together with everything needed to run it.
pub struct Model {
    pub net: ProbUNet,
    pub params: ParamStore<f32>,
    pub norm: NormStats,
    pub factor: usize,
}

/// Upsample a coarse physical batch and normalize it, `[B, C, h, w]` to `[B, C, H, W]`.
pub fn prepare_input(lr: &FieldTensor, factor: usize, norm: &NormStats) -> Result<Tensor<f32>> {
    let up = norm.normalize(&upsample_nn(lr, factor)?)?;
    let s = up.shape();
    Ok(Tensor::new(&s, up.into_values()))
}

fn field_batch(t: &FieldTensor) -> Tensor<f32> {
    Tensor::new(&t.shape(), t.values().to_vec())
}

impl Model {
    /// `M` prior draws per coarse time step, constrained and in physical units.
    ///
    /// Output is `[T * M, C, H, W]`, time-major, with each day's `time_index` repeated `M` times.
    /// Member `j` of day `t` uses the noise stream `(seed, time_index[t], j)`, so results do not
    /// depend on `batch`.
    pub fn sample_ensemble(&self, lr: &FieldTensor, members: usize, seed: u64, batch: usize) -> Result<FieldTensor> {
        if members == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        let batch = batch.max(1);
        let l = self.net.config.probunet.latent_dim;
        let [t, c, h, w] = lr.shape();
        let (hh, ww) = (h * self.factor, w * self.factor);
        let frame = c * hh * ww;
        let mut values = vec![0f32; t * members * frame];
        let mut start = 0;
        while start < t {
            let n = batch.min(t - start);
            let chunk = lr.slice_time(start, start + n)?;
            let x = prepare_input(&chunk, self.factor, &self.norm)?;
            let mut g = Graph::<f32>::new();
            let p = self.params.bind(&mut g, false);
            let xv = g.constant(x);
            let feats = self.net.features(&mut g, &p, xv)?;
            let prior = self.net.prior(&mut g, &p, xv);
            for j in 0..members {
                let mut eps = Vec::with_capacity(n * l);
                for i in 0..n {
                    let mut rng = seed::rng(seed, &[chunk.time_index[i] as u64, j as u64]);
                    eps.extend((0..l).map(|_| rng.sample::<f32, _>(StandardNormal)));
                }
                let e = g.constant(Tensor::new(&[n, l], eps));
                let z = reparameterize(&mut g, prior, e);
                let pred = self.net.fuse_and_decode(&mut g, &p, xv, feats, z);
                let phys = to_physical(&mut g, pred, &self.norm, &self.net.config.constraints);
                let mut out = g.value(phys).clone();
                repair_rounding(&mut out);
                for i in 0..n {
                    let dst = ((start + i) * members + j) * frame;
                    values[dst..dst + frame].copy_from_slice(&out.data()[i * frame..(i + 1) * frame]);
                }
            }
            start += n;
        }
        let time_index = lr.time_index.iter().flat_map(|&d| std::iter::repeat_n(d, members)).collect();
        let mut out = FieldTensor::climate(values, [t * members, c, hh, ww], time_index)?;
        out.time_epoch = lr.time_epoch.clone();
        Ok(out)
    }

    /// Deterministic batch forward used in tests and validation: returns physical `[B, C, H, W]`.
    pub fn predict_with_latent(&self, lr: &FieldTensor, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let x = prepare_input(lr, self.factor, &self.norm)?;
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x);
        let feats = self.net.features(&mut g, &p, xv)?;
        let zv = g.constant(z.clone());
        let pred = self.net.fuse_and_decode(&mut g, &p, xv, feats, zv);
        let phys = to_physical(&mut g, pred, &self.norm, &self.net.config.constraints);
        let mut out = g.value(phys).clone();
        repair_rounding(&mut out);
        Ok(out)
    }

    /// Physical high-resolution target as a graph-ready tensor.
    pub fn target(hr: &FieldTensor) -> Tensor<f32> {
        field_batch(hr)
    }
}
