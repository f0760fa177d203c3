//! Convolution, normalization and residual-block building blocks shared by the networks.

use probunet_nn::{Bound, Graph, ParamId, ParamStore, Real, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Group,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Relu,
}

impl Activation {
    pub fn apply<T: Real>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Silu => g.silu(x),
            Activation::Relu => g.relu(x),
        }
    }
}

pub const MAX_GROUPS: usize = 32;
const NORM_EPS: f64 = 1e-5;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Weight initialization mode for new layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-style normal with the given gain.
    Normal(f64),
    Zero,
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        (cin, cout, k): (usize, usize, usize),
        stride: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = [cout, cin, k, k];
        let weight = match init {
            Init::Normal(gain) => store.add_normal(format!("{name}.weight"), &shape, gain, rng),
            Init::Zero => store.add_zeros(format!("{name}.weight"), &shape),
        };
        let bias = store.add_zeros(format!("{name}.bias"), &[cout]);
        Self { weight, bias, stride, pad: k / 2 }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub enum Norm {
    Group { gamma: ParamId, beta: ParamId, groups: usize },
    Identity,
}

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, kind: NormKind) -> Self {
        match kind {
            NormKind::Group => Norm::Group {
                gamma: store.add_full(format!("{name}.gamma"), &[channels], 1.0),
                beta: store.add_zeros(format!("{name}.beta"), &[channels]),
                groups: gcd(channels, MAX_GROUPS),
            },
            NormKind::None => Norm::Identity,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        match *self {
            Norm::Group { gamma, beta, groups } => g.group_norm(x, p.var(gamma), p.var(beta), groups, NORM_EPS),
            Norm::Identity => x,
        }
    }
}

/// `norm -> act -> conv3x3`, twice, plus a skip that is the identity or a 1x1 projection.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
    act: Activation,
}

impl ResBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        (cin, cout): (usize, usize),
        norm: NormKind,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let gain = std::f64::consts::SQRT_2;
        Self {
            norm1: Norm::new(store, &format!("{name}.norm1"), cin, norm),
            conv1: Conv::new(store, &format!("{name}.conv1"), (cin, cout, 3), 1, Init::Normal(gain), rng),
            norm2: Norm::new(store, &format!("{name}.norm2"), cout, norm),
            conv2: Conv::new(store, &format!("{name}.conv2"), (cout, cout, 3), 1, Init::Normal(0.5), rng),
            skip: (cin != cout)
                .then(|| Conv::new(store, &format!("{name}.skip"), (cin, cout, 1), 1, Init::Normal(1.0), rng)),
            act,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let h = self.norm1.forward(g, p, x);
        let h = self.act.apply(g, h);
        let h = self.conv1.forward(g, p, h);
        let h = self.norm2.forward(g, p, h);
        let h = self.act.apply(g, h);
        let h = self.conv2.forward(g, p, h);
        let s = match &self.skip {
            Some(c) => c.forward(g, p, x),
            None => x,
        };
        g.add(s, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use probunet_nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn group_count_divides_channels() {
        for c in [1, 3, 8, 12, 48, 64, 80, 256] {
            let g = gcd(c, MAX_GROUPS);
            assert_eq!(c % g, 0);
            assert!(g <= MAX_GROUPS);
        }
        assert_eq!(gcd(64, MAX_GROUPS), 32);
        assert_eq!(gcd(12, MAX_GROUPS), 4);
    }

    #[test]
    fn zero_weight_identity_block_passes_input_through() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = ResBlock::new(&mut store, "b", (4, 4), NormKind::Group, Activation::Silu, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).ends_with(".weight") {
                store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = Tensor::new(&[1, 4, 4, 4], (0..64).map(|i| i as f64 * 0.1 - 2.0).collect());
        let xv = g.constant(x.clone());
        let y = block.forward(&mut g, &p, xv);
        assert_eq!(g.value(y), &x);
    }
}
