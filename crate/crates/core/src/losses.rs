//! Training objectives: weighted MSE / MS-SSIM blends and the almost-fair CRPS.
//!
//! Every reconstruction term is computed on constrained physical-unit predictions.

use probunet_nn::{Bound, Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{NormStats, PR};
use crate::probunet::{kl_mean, normalize_graph, reparameterize, to_physical, LatentVars, ProbUNet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    WmseMsssim,
    Afcrps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsssimConfig {
    pub scales: usize,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for MsssimConfig {
    fn default() -> Self {
        Self { scales: 3, window: 11, sigma: 1.5, k1: 0.01, k2: 0.03 }
    }
}

/// Standard five-scale exponents; the first `scales` are used, renormalized to sum to one.
const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

impl MsssimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MSSSIM_WEIGHTS.len()).contains(&self.scales) {
            return Err(Error::Config(format!("MS-SSIM supports 1 to 5 scales, got {}", self.scales)));
        }
        if self.window == 0 || self.window % 2 == 0 || !(self.sigma > 0.0) {
            return Err(Error::Config("MS-SSIM window must be odd and sigma positive".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        let w = &MSSSIM_WEIGHTS[..self.scales];
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    /// Normalized 1-D Gaussian taps.
    pub fn kernel(&self) -> Vec<f64> {
        let c = (self.window / 2) as f64;
        let raw: Vec<f64> =
            (0..self.window).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    pub fn check_size(&self, h: usize, w: usize) -> Result<()> {
        let f = 1 << (self.scales - 1);
        if h % f != 0 || w % f != 0 || h / f < self.window || w / f < self.window {
            return Err(Error::Config(format!(
                "{h}x{w} is too small or not divisible for {} MS-SSIM scales with window {}",
                self.scales, self.window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub members: usize,
    #[serde(default)]
    pub msssim: MsssimConfig,
}

pub const ALPHA: f64 = 0.007;
pub const BETA: f64 = 0.048;
pub const ETA: f64 = 0.95;
pub const TUNED_LAMBDA: f64 = 0.158;
pub const LOSS_NAMES: [&str; 4] = ["afcrps", "wmse", "msssim", "tuned"];

impl ObjectiveSpec {
    fn blend(lambda: f64) -> Self {
        Self {
            kind: ObjectiveKind::WmseMsssim,
            lambda,
            alpha: ALPHA,
            beta: BETA,
            eta: ETA,
            members: 1,
            msssim: MsssimConfig::default(),
        }
    }

    pub fn wmse() -> Self {
        Self::blend(1.0)
    }

    pub fn msssim() -> Self {
        Self::blend(0.0)
    }

    pub fn tuned() -> Self {
        Self::blend(TUNED_LAMBDA)
    }

    pub fn afcrps() -> Self {
        Self { kind: ObjectiveKind::Afcrps, members: 4, ..Self::blend(1.0) }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "afcrps" => Ok(Self::afcrps()),
            "wmse" => Ok(Self::wmse()),
            "msssim" => Ok(Self::msssim()),
            "tuned" => Ok(Self::tuned()),
            other => Err(Error::Config(format!("unknown loss {other:?}, expected one of {LOSS_NAMES:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::Config("alpha and beta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta {} outside [0, 1]", self.eta)));
        }
        match self.kind {
            ObjectiveKind::Afcrps if self.members < 2 => {
                Err(Error::Config(format!("afCRPS needs at least 2 members, got {}", self.members)))
            }
            ObjectiveKind::WmseMsssim if self.members != 1 => {
                Err(Error::Config("the WMSE / MS-SSIM objective uses a single latent sample".into()))
            }
            _ => self.msssim.validate(),
        }
    }

    /// Latent samples drawn per training example.
    pub fn samples(&self) -> usize {
        match self.kind {
            ObjectiveKind::Afcrps => self.members,
            ObjectiveKind::WmseMsssim => 1,
        }
    }

    fn uses_msssim(&self) -> bool {
        self.kind == ObjectiveKind::WmseMsssim && self.lambda < 1.0
    }
}

/// `min(alpha * e^(beta * y), 1)`.
pub fn wmse_weight(y: f64, alpha: f64, beta: f64) -> f64 {
    (alpha * (beta * y).exp()).min(1.0)
}

/// Per-pixel weights taken from the target: exponential on precipitation, one elsewhere.
pub fn channel_weights<T: Real>(y: &Tensor<T>, alpha: f64, beta: f64) -> Tensor<T> {
    let (_, c, h, w) = y.dims4();
    let hw = h * w;
    let mut out = y.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = if (i / hw) % c == PR { T::of(wmse_weight(v.f64(), alpha, beta)) } else { T::one() };
    }
    out
}

/// Mean of `w * (y - yhat)^2` with constant weights `w`.
pub fn wmse_graph<T: Real>(g: &mut Graph<T>, y: Var, yhat: Var, weights: &Tensor<T>) -> Var {
    let d = g.sub(yhat, y);
    let sq = g.square(d);
    let w = g.constant(weights.clone());
    let wsq = g.mul(sq, w);
    g.mean(wsq)
}

/// WMSE with the exponential weight on every pixel.
pub fn wmse(y: &Tensor<f64>, yhat: &Tensor<f64>, alpha: f64, beta: f64) -> Result<f64> {
    if y.shape() != yhat.shape() {
        return Err(Error::Shape(format!("target {:?} vs prediction {:?}", y.shape(), yhat.shape())));
    }
    let mut g = Graph::new();
    let (yv, pv) = (g.constant(y.clone()), g.constant(yhat.clone()));
    let w = y.map(|v| wmse_weight(v, alpha, beta));
    let l = wmse_graph(&mut g, yv, pv, &w);
    Ok(g.scalar(l))
}

fn gaussian_blur<T: Real>(g: &mut Graph<T>, x: Var, kernel: &[f64]) -> Var {
    let h = g.filter1d(x, kernel, true);
    g.filter1d(h, kernel, false)
}

/// Per-channel stability constants broadcast as a shift.
fn add_channel_constant<T: Real>(g: &mut Graph<T>, x: Var, c: &[f64]) -> Var {
    let ones = vec![1.0; c.len()];
    g.channel_affine(x, &ones, c)
}

/// `(ssim, cs)` plane means, each `[B, C]`.
fn ssim_terms<T: Real>(g: &mut Graph<T>, x: Var, y: Var, kernel: &[f64], c1: &[f64], c2: &[f64]) -> (Var, Var) {
    let mu1 = gaussian_blur(g, x, kernel);
    let mu2 = gaussian_blur(g, y, kernel);
    let mu1_sq = g.square(mu1);
    let mu2_sq = g.square(mu2);
    let mu12 = g.mul(mu1, mu2);
    let xx = g.square(x);
    let yy = g.square(y);
    let xy = g.mul(x, y);
    let exx = gaussian_blur(g, xx, kernel);
    let eyy = gaussian_blur(g, yy, kernel);
    let exy = gaussian_blur(g, xy, kernel);
    let s1 = g.sub(exx, mu1_sq);
    let s2 = g.sub(eyy, mu2_sq);
    let s12 = g.sub(exy, mu12);

    let num = g.scale(s12, 2.0);
    let num = add_channel_constant(g, num, c2);
    let den = g.add(s1, s2);
    let den = add_channel_constant(g, den, c2);
    let cs_map = g.div(num, den);

    let lnum = g.scale(mu12, 2.0);
    let lnum = add_channel_constant(g, lnum, c1);
    let lden = g.add(mu1_sq, mu2_sq);
    let lden = add_channel_constant(g, lden, c1);
    let l_map = g.div(lnum, lden);
    let ssim_map = g.mul(l_map, cs_map);
    (g.mean_spatial(ssim_map), g.mean_spatial(cs_map))
}

/// MS-SSIM per sample and channel, `[B, C]`, with per-channel dynamic range.
pub fn msssim_graph<T: Real>(g: &mut Graph<T>, y: Var, yhat: Var, data_range: &[f64], cfg: &MsssimConfig) -> Result<Var> {
    cfg.validate()?;
    let s = g.shape(y).to_vec();
    if s != g.shape(yhat) || s.len() != 4 {
        return Err(Error::Shape(format!("target {s:?} vs prediction {:?}", g.shape(yhat))));
    }
    if data_range.len() != s[1] {
        return Err(Error::Shape(format!("{} data ranges for {} channels", data_range.len(), s[1])));
    }
    cfg.check_size(s[2], s[3])?;
    let kernel = cfg.kernel();
    let c1: Vec<f64> = data_range.iter().map(|l| (cfg.k1 * l).powi(2)).collect();
    let c2: Vec<f64> = data_range.iter().map(|l| (cfg.k2 * l).powi(2)).collect();
    let weights = cfg.weights();
    let (mut x, mut y) = (yhat, y);
    let mut acc: Option<Var> = None;
    for (i, &w) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(g, x, y, &kernel, &c1, &c2);
        let term = if i + 1 < weights.len() {
            x = g.avg_pool2(x);
            y = g.avg_pool2(y);
            g.relu(cs)
        } else {
            g.relu(ssim)
        };
        let term = g.powf(term, w);
        acc = Some(match acc {
            Some(a) => g.mul(a, term),
            None => term,
        });
    }
    Ok(acc.expect("at least one scale"))
}

/// Mean MS-SSIM over samples and channels.
pub fn msssim(y: &Tensor<f64>, yhat: &Tensor<f64>, data_range: &[f64], cfg: &MsssimConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (yv, pv) = (g.constant(y.clone()), g.constant(yhat.clone()));
    let m = msssim_graph(&mut g, yv, pv, data_range, cfg)?;
    let m = g.mean(m);
    Ok(g.scalar(m))
}

/// `lambda * wmse + (1 - lambda) * (1 - msssim)`, averaged over channels.
pub fn wmse_msssim_graph<T: Real>(
    g: &mut Graph<T>,
    y: Var,
    yhat: Var,
    spec: &ObjectiveSpec,
    data_range: &[f64],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    if spec.lambda > 0.0 {
        let w = channel_weights(g.value(y), spec.alpha, spec.beta);
        let l = wmse_graph(g, y, yhat, &w);
        total = Some(g.scale(l, spec.lambda));
    }
    if spec.uses_msssim() {
        let m = msssim_graph(g, y, yhat, data_range, &spec.msssim)?;
        let m = g.mean(m);
        let one_minus = g.neg(m);
        let one_minus = g.add_scalar(one_minus, 1.0);
        let part = g.scale(one_minus, 1.0 - spec.lambda);
        total = Some(match total {
            Some(t) => g.add(t, part),
            None => part,
        });
    }
    Ok(total.expect("lambda in [0, 1] selects at least one term"))
}

pub fn wmse_msssim_loss(y: &Tensor<f64>, yhat: &Tensor<f64>, spec: &ObjectiveSpec, data_range: &[f64]) -> Result<f64> {
    spec.validate()?;
    if y.shape() != yhat.shape() {
        return Err(Error::Shape(format!("target {:?} vs prediction {:?}", y.shape(), yhat.shape())));
    }
    let mut g = Graph::new();
    let (yv, pv) = (g.constant(y.clone()), g.constant(yhat.clone()));
    let l = wmse_msssim_graph(&mut g, yv, pv, spec, data_range)?;
    Ok(g.scalar(l))
}

/// Almost-fair CRPS averaged over every element:
/// `(1/M) sum_j |x_j - y| - (1 - eps) / (M (M - 1)) sum_{j<k} |x_j - x_k|`, `eps = (1 - eta) / M`.
pub fn afcrps_graph<T: Real>(g: &mut Graph<T>, members: &[Var], y: Var, eta: f64) -> Result<Var> {
    let m = members.len();
    if m < 2 {
        return Err(Error::Config(format!("afCRPS needs at least 2 members, got {m}")));
    }
    let eps = (1.0 - eta) / m as f64;
    let mut skill: Option<Var> = None;
    for &x in members {
        let d = g.sub(x, y);
        let a = g.abs(d);
        skill = Some(match skill {
            Some(s) => g.add(s, a),
            None => a,
        });
    }
    let mut spread: Option<Var> = None;
    for j in 0..m {
        for k in j + 1..m {
            let d = g.sub(members[j], members[k]);
            let a = g.abs(d);
            spread = Some(match spread {
                Some(s) => g.add(s, a),
                None => a,
            });
        }
    }
    let skill = g.scale(skill.expect("m >= 2"), 1.0 / m as f64);
    let spread = g.scale(spread.expect("m >= 2"), (1.0 - eps) / (m * (m - 1)) as f64);
    let per = g.sub(skill, spread);
    Ok(g.mean(per))
}

/// Element-averaged afCRPS of an ensemble of equally shaped tensors.
pub fn afcrps_mean(members: &[Tensor<f64>], y: &Tensor<f64>, eta: f64) -> Result<f64> {
    if members.iter().any(|m| m.shape() != y.shape()) {
        return Err(Error::Shape("every member must match the target shape".into()));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = members.iter().map(|m| g.constant(m.clone())).collect();
    let yv = g.constant(y.clone());
    let l = afcrps_graph(&mut g, &vars, yv, eta)?;
    Ok(g.scalar(l))
}

/// Scalar afCRPS of `members` against `y`.
pub fn afcrps(members: &[f64], y: f64, eta: f64) -> Result<f64> {
    let ms: Vec<Tensor<f64>> = members.iter().map(|&v| Tensor::new(&[1], vec![v])).collect();
    afcrps_mean(&ms, &Tensor::new(&[1], vec![y]), eta)
}

/// Reconstruction loss of physical predictions against the physical target.
pub fn recon_graph<T: Real>(
    g: &mut Graph<T>,
    members: &[Var],
    y: Var,
    spec: &ObjectiveSpec,
    norm: &NormStats,
) -> Result<Var> {
    match spec.kind {
        ObjectiveKind::Afcrps => afcrps_graph(g, members, y, spec.eta),
        ObjectiveKind::WmseMsssim => {
            if members.len() != 1 {
                return Err(Error::Config("the WMSE / MS-SSIM objective takes one prediction".into()));
            }
            wmse_msssim_graph(g, y, members[0], spec, &norm.data_range)
        }
    }
}

/// One training batch: normalized upsampled input and physical target.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub x_up: Tensor<T>,
    pub y: Tensor<T>,
}

/// Handles to the pieces of the objective on the graph.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub gamma: f64,
}

/// Where the latent samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    Posterior,
    Prior,
}

/// Physical predictions for one latent draw per entry of `eps`.
#[allow(clippy::too_many_arguments)]
fn decode_members<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    net: &ProbUNet,
    x: Var,
    feats: Var,
    lat: LatentVars,
    eps: &[Tensor<T>],
    norm: &NormStats,
) -> Vec<Var> {
    eps.iter()
        .map(|e| {
            let ev = g.constant(e.clone());
            let z = reparameterize(g, lat, ev);
            let pred = net.fuse_and_decode(g, p, x, feats, z);
            to_physical(g, pred, norm, &net.config().constraints)
        })
        .collect()
}

/// `recon + gamma(step) * KL`, latent draws from the posterior.
///
/// `eps` holds one `[B, latent_dim]` standard-normal tensor per member.
#[allow(clippy::too_many_arguments)]
pub fn training_objective<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    net: &ProbUNet,
    batch: &Batch<T>,
    spec: &ObjectiveSpec,
    norm: &NormStats,
    step: u64,
    eps: &[Tensor<T>],
) -> Result<ObjectiveParts> {
    if eps.len() != spec.samples() {
        return Err(Error::Config(format!("objective needs {} latent draws, got {}", spec.samples(), eps.len())));
    }
    let x = g.constant(batch.x_up.clone());
    let y = g.constant(batch.y.clone());
    let y_norm = normalize_graph(g, y, norm);
    let feats = net.features(g, p, x)?;
    let q = net.posterior(g, p, x, y_norm);
    let prior = net.prior(g, p, x);
    let members = decode_members(g, p, net, x, feats, q, eps, norm);
    let recon = recon_graph(g, &members, y, spec, norm)?;
    let kl = kl_mean(g, q, prior);
    let gamma = net.config().probunet.kl_weight(step);
    let weighted = g.scale(kl, gamma);
    let total = g.add(recon, weighted);
    Ok(ObjectiveParts { total, recon, kl, gamma })
}

/// Reconstruction loss with latent draws from the chosen network, no KL term.
#[allow(clippy::too_many_arguments)]
pub fn recon_objective<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    net: &ProbUNet,
    batch: &Batch<T>,
    spec: &ObjectiveSpec,
    norm: &NormStats,
    eps: &[Tensor<T>],
    source: LatentSource,
) -> Result<Var> {
    let x = g.constant(batch.x_up.clone());
    let y = g.constant(batch.y.clone());
    let feats = net.features(g, p, x)?;
    let lat = match source {
        LatentSource::Prior => net.prior(g, p, x),
        LatentSource::Posterior => {
            let y_norm = normalize_graph(g, y, norm);
            net.posterior(g, p, x, y_norm)
        }
    };
    let members = decode_members(g, p, net, x, feats, lat, eps, norm);
    recon_graph(g, &members, y, spec, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presets_carry_the_published_values() {
        assert_eq!(ObjectiveSpec::from_name("tuned").unwrap().lambda, 0.158);
        assert_eq!(ObjectiveSpec::from_name("wmse").unwrap().lambda, 1.0);
        assert_eq!(ObjectiveSpec::from_name("msssim").unwrap().lambda, 0.0);
        let a = ObjectiveSpec::from_name("afcrps").unwrap();
        assert_eq!((a.eta, a.members, a.kind), (0.95, 4, ObjectiveKind::Afcrps));
        assert!(ObjectiveSpec::from_name("ce").is_err());
        for n in LOSS_NAMES {
            ObjectiveSpec::from_name(n).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = ObjectiveSpec::afcrps();
        s.members = 1;
        assert!(s.validate().is_err());
        let mut s = ObjectiveSpec::tuned();
        s.lambda = 1.5;
        assert!(s.validate().is_err());
        let mut s = ObjectiveSpec::wmse();
        s.alpha = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_pixel_wmse() {
        let l = wmse(&Tensor::new(&[1], vec![10.0]), &Tensor::new(&[1], vec![8.0]), ALPHA, BETA).unwrap();
        assert!((wmse_weight(10.0, ALPHA, BETA) - 0.0113125208).abs() < 1e-10);
        assert!((l - 0.0452500833).abs() < 1e-10, "{l}");
    }

    #[test]
    fn weight_saturates_at_the_closed_form_threshold() {
        let y_sat = (1.0 / ALPHA).ln() / BETA;
        assert!((y_sat - 103.37).abs() < 0.01, "{y_sat}");
        assert!(wmse_weight(y_sat - 0.01, ALPHA, BETA) < 1.0);
        assert_eq!(wmse_weight(y_sat + 0.01, ALPHA, BETA), 1.0);
    }

    #[test]
    fn afcrps_pinned_value() {
        let v = afcrps(&[0.0, 2.0], 1.0, 0.95).unwrap();
        assert!((v - 0.025).abs() < 1e-15, "{v}");
        assert!(afcrps(&[1.0], 1.0, 0.95).is_err());
    }

    #[test]
    fn msssim_of_identical_fields_is_one() {
        let y = Tensor::new(&[1, 3, 64, 64], (0..3 * 4096).map(|i| ((i * 37 % 101) as f64).sin() * 5.0).collect());
        let v = msssim(&y, &y, &[10.0, 10.0, 10.0], &MsssimConfig::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn msssim_rejects_small_images() {
        let y = Tensor::<f64>::zeros(&[1, 1, 32, 32]);
        assert!(matches!(msssim(&y, &y, &[1.0], &MsssimConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = MsssimConfig::default().kernel();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert!((k[i] - k[10 - i]).abs() < 1e-18);
        }
        let w = MsssimConfig::default().weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn afcrps_of_constant_members_is_absolute_error(c in -50.0f64..50.0, y in -50.0f64..50.0, m in 2usize..6) {
            let v = afcrps(&vec![c; m], y, 0.95).unwrap();
            prop_assert!((v - (c - y).abs()).abs() < 1e-12);
        }

        #[test]
        fn afcrps_is_translation_invariant(xs in proptest::collection::vec(-10.0f64..10.0, 2..6), y in -10.0f64..10.0, d in -100.0f64..100.0) {
            let a = afcrps(&xs, y, 0.95).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + d).collect();
            let b = afcrps(&shifted, y + d, 0.95).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn afcrps_scales_with_the_data(xs in proptest::collection::vec(-10.0f64..10.0, 2..6), y in -10.0f64..10.0, s in 0.1f64..10.0) {
            let a = afcrps(&xs, y, 0.95).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|x| x * s).collect();
            let b = afcrps(&scaled, y * s, 0.95).unwrap();
            prop_assert!((b - s * a).abs() < 1e-9 * (1.0 + b.abs()));
        }

        #[test]
        fn wmse_weight_is_monotone_and_capped(a in 0.0f64..200.0, d in 0.0f64..50.0) {
            let (w1, w2) = (wmse_weight(a, ALPHA, BETA), wmse_weight(a + d, ALPHA, BETA));
            prop_assert!(w1 <= w2 && w2 <= 1.0);
        }
    }
}
