use serde::{Deserialize, Serialize};

use super::FieldTensor;
use crate::{Error, Result};

/// Per-variable z-score statistics, computed on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub vars: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `max - min` per variable; sets the MS-SSIM stability constants.
    pub data_range: Vec<f64>,
}

impl NormStats {
    pub fn from_training(train: &FieldTensor) -> Result<Self> {
        let [t, c, h, w] = train.shape();
        let n = (t * h * w) as f64;
        let mut stats = Self { vars: train.var_names.clone(), mean: vec![], std: vec![], data_range: vec![] };
        for ci in 0..c {
            let (mut sum, mut lo, mut hi) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
            for ti in 0..t {
                for &v in train.plane(ti, ci) {
                    let v = v as f64;
                    sum += v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            let mean = sum / n;
            let var = (0..t)
                .flat_map(|ti| train.plane(ti, ci).iter())
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n;
            let std = var.sqrt();
            if !(std > 0.0) {
                return Err(Error::ZeroStd(train.var_names[ci].clone()));
            }
            stats.mean.push(mean);
            stats.std.push(std);
            stats.data_range.push(hi - lo);
        }
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.vars.len();
        if self.mean.len() != c || self.std.len() != c || self.data_range.len() != c {
            return Err(Error::Config("normalization statistics have inconsistent lengths".into()));
        }
        if let Some(i) = self.std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::ZeroStd(self.vars[i].clone()));
        }
        Ok(())
    }

    fn check(&self, t: &FieldTensor) -> Result<()> {
        self.validate()?;
        if t.var_names != self.vars {
            return Err(Error::Shape(format!("tensor variables {:?} vs statistics {:?}", t.var_names, self.vars)));
        }
        Ok(())
    }

    pub fn normalize(&self, t: &FieldTensor) -> Result<FieldTensor> {
        self.check(t)?;
        let mut out = t.clone();
        for ti in 0..t.len_time() {
            for ci in 0..t.channels() {
                let (m, s) = (self.mean[ci], self.std[ci]);
                for v in out.plane_mut(ti, ci) {
                    *v = ((*v as f64 - m) / s) as f32;
                }
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, t: &FieldTensor) -> Result<FieldTensor> {
        self.check(t)?;
        let mut out = t.clone();
        for ti in 0..t.len_time() {
            for ci in 0..t.channels() {
                let (m, s) = (self.mean[ci], self.std[ci]);
                for v in out.plane_mut(ti, ci) {
                    *v = (*v as f64 * s + m) as f32;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(values: Vec<f32>) -> FieldTensor {
        let n = values.len() / 3;
        FieldTensor::climate(values, [n, 3, 1, 1], (0..n as i64).collect()).unwrap()
    }

    #[test]
    fn normalized_training_data_has_zero_mean_unit_std() {
        let t = tensor((0..300).map(|i| ((i * 37) % 101) as f32 * 0.3 - 4.0).collect());
        let stats = NormStats::from_training(&t).unwrap();
        let z = stats.normalize(&t).unwrap();
        let again = NormStats::from_training(&z).unwrap();
        for c in 0..3 {
            assert!(again.mean[c].abs() < 1e-6);
            assert!((again.std[c] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn round_trip_error_is_small() {
        let t = tensor((0..600).map(|i| ((i * 7919) % 1000) as f32 * 0.05 - 10.0).collect());
        let stats = NormStats::from_training(&t).unwrap();
        let back = stats.denormalize(&stats.normalize(&t).unwrap()).unwrap();
        let err = t.values().iter().zip(back.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 1e-4, "max abs round-trip error {err}");
    }

    #[test]
    fn constant_variable_is_rejected() {
        let mut values = vec![0.0f32; 30];
        for (i, v) in values.iter_mut().enumerate() {
            if i % 3 != 1 {
                *v = i as f32;
            }
        }
        assert!(matches!(NormStats::from_training(&tensor(values)), Err(Error::ZeroStd(v)) if v == "tmin"));
    }
}
