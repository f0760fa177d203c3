//! Output layer that makes precipitation positive and `tmax` exceed `tmin`.
//!
//! Raw channels are `(pr_raw, tmin_raw, gap_raw)` in physical units:
//! `pr = softplus(pr_raw)`, `tmin = tmin_raw`, `tmax = tmin + softplus(gap_raw)`,
//! with `softplus(x) = ln(1 + e^(x + c))`.

use probunet_nn::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{PR, TMAX, TMIN};
use crate::{Error, Result};

pub use probunet_nn::softplus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    pub c: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self { c: 1e-7 }
    }
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::Config(format!("softplus shift must be finite and >= 0, got {}", self.c)));
        }
        Ok(())
    }
}

/// Differentiable constraint layer on `[B, 3, H, W]`.
pub fn apply_graph<T: Real>(g: &mut Graph<T>, raw: Var, cfg: &ConstraintConfig) -> Var {
    debug_assert_eq!(g.shape(raw)[1], 3, "constraints expect (pr, tmin, gap) channels");
    let pr = g.slice_channels(raw, PR, 1);
    let tmin = g.slice_channels(raw, TMIN, 1);
    let gap = g.slice_channels(raw, TMAX, 1);
    let pr = g.softplus(pr, cfg.c);
    let gap = g.softplus(gap, cfg.c);
    let tmax = g.add(tmin, gap);
    g.concat_channels(&[pr, tmin, tmax])
}

/// Smallest step that moves `x` upward after rounding.
fn bump<T: Real>(x: T) -> T {
    let step = x.abs().max(T::min_positive_value()) * T::epsilon();
    if step > T::zero() {
        step
    } else {
        T::min_positive_value()
    }
}

/// Constrained physical output for a raw `[B, 3, H, W]` tensor.
pub fn apply_constraints<T: Real>(raw: &Tensor<T>, cfg: &ConstraintConfig) -> Tensor<T> {
    let mut g = Graph::new();
    let x = g.constant(raw.clone());
    let y = apply_graph(&mut g, x, cfg);
    let mut out = g.value(y).clone();
    repair_rounding(&mut out);
    out
}

/// Repairs the cases where rounding collapses `softplus` to zero or `tmin + gap`
/// back onto `tmin`, so the strict inequalities also hold in floating point.
/// Moves values by at most one unit in the last place.
pub fn repair_rounding<T: Real>(out: &mut Tensor<T>) {
    let (b, _, h, w) = out.dims4();
    let hw = h * w;
    let data = out.data_mut();
    for n in 0..b {
        let base = n * 3 * hw;
        for p in 0..hw {
            let pr = &mut data[base + PR * hw + p];
            if *pr <= T::zero() {
                *pr = T::min_positive_value();
            }
            let tmin = data[base + TMIN * hw + p];
            let tmax = &mut data[base + TMAX * hw + p];
            if *tmax <= tmin {
                *tmax = tmin + bump(tmin);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let v = softplus(0.0f64, 1e-7);
        assert!((v - (1.0 + 1e-7f64.exp()).ln()).abs() < 1e-15);
        assert!((v - 0.6931472).abs() < 1e-7);
    }

    #[test]
    fn softplus_is_asymptotically_the_identity() {
        let v = softplus(100.0f64, 1e-7);
        assert!((v - 100.0000001).abs() < 1e-9, "{v}");
    }

    #[test]
    fn softplus_derivative_is_the_logistic() {
        for &x in &[-20.0, -3.0, -0.5, 0.0, 0.7, 4.0, 29.0, 31.0] {
            let h = 1e-6;
            let fd = (softplus(x + h, 1e-7) - softplus(x - h, 1e-7)) / (2.0 * h);
            let s = 1.0 / (1.0 + (-(x + 1e-7f64)).exp());
            assert!((fd - s).abs() < 1e-6, "x={x}: {fd} vs {s}");
        }
    }

    #[test]
    fn negative_shift_is_rejected() {
        assert!(ConstraintConfig { c: -1.0 }.validate().is_err());
        ConstraintConfig::default().validate().unwrap();
    }

    #[test]
    fn extreme_raw_values_still_satisfy_strict_inequalities() {
        let raw = Tensor::new(&[1, 3, 1, 3], vec![-1e4f32, -200.0, 0.0, 25.0, -40.0, 0.0, -1e4, -60.0, -1e4]);
        let out = apply_constraints(&raw, &ConstraintConfig::default());
        for p in 0..3 {
            assert!(out.data()[p] > 0.0);
            assert!(out.data()[6 + p] > out.data()[3 + p]);
        }
    }

    proptest! {
        #[test]
        fn shape_is_preserved_and_ordering_holds(vals in proptest::collection::vec(-300.0f32..300.0, 3 * 8)) {
            let raw = Tensor::new(&[2, 3, 2, 2], vals);
            let out = apply_constraints(&raw, &ConstraintConfig::default());
            prop_assert_eq!(out.shape(), raw.shape());
            for n in 0..2 {
                for p in 0..4 {
                    prop_assert!(out.data()[n * 12 + p] > 0.0);
                    prop_assert!(out.data()[n * 12 + 8 + p] > out.data()[n * 12 + 4 + p]);
                    prop_assert_eq!(out.data()[n * 12 + 4 + p], raw.data()[n * 12 + 4 + p]);
                }
            }
        }

        #[test]
        fn softplus_is_positive_and_increasing(a in -500.0f64..500.0, d in 1e-3f64..10.0) {
            prop_assert!(softplus(a, 1e-7) > 0.0);
            prop_assert!(softplus(a + d, 1e-7) > softplus(a, 1e-7));
        }
    }
}
