use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default variables, in the channel order every model and metric assumes.
pub const VAR_NAMES: [&str; 3] = ["pr", "tmin", "tmax"];
pub const UNITS: [&str; 3] = ["mm/day", "degC", "degC"];
pub const PR: usize = 0;
pub const TMIN: usize = 1;
pub const TMAX: usize = 2;

/// Epoch label written into file headers for synthetic data.
pub const SYNTHETIC_EPOCH: &str = "synthetic-day-0";

/// `[time, variable, height, width]` block of physical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTensor {
    values: Vec<f32>,
    shape: [usize; 4],
    pub var_names: Vec<String>,
    pub units: Vec<String>,
    pub time_epoch: String,
    pub time_index: Vec<i64>,
}

impl FieldTensor {
    pub fn new(
        values: Vec<f32>,
        shape: [usize; 4],
        var_names: Vec<String>,
        units: Vec<String>,
        time_epoch: impl Into<String>,
        time_index: Vec<i64>,
    ) -> Result<Self> {
        let [t, c, h, w] = shape;
        if values.len() != t * c * h * w {
            return Err(Error::Shape(format!("{} values for shape {shape:?}", values.len())));
        }
        if var_names.len() != c || units.len() != c {
            return Err(Error::Shape(format!(
                "{c} channels but {} names and {} units",
                var_names.len(),
                units.len()
            )));
        }
        if time_index.len() != t {
            return Err(Error::Shape(format!("{t} time steps but {} time indices", time_index.len())));
        }
        Ok(Self { values, shape, var_names, units, time_epoch: time_epoch.into(), time_index })
    }

    /// Tensor with the standard `pr, tmin, tmax` variables.
    pub fn climate(values: Vec<f32>, shape: [usize; 4], time_index: Vec<i64>) -> Result<Self> {
        Self::new(
            values,
            shape,
            VAR_NAMES.iter().map(|s| s.to_string()).collect(),
            UNITS.iter().map(|s| s.to_string()).collect(),
            SYNTHETIC_EPOCH,
            time_index,
        )
    }

    /// Zero-filled tensor with the same metadata as `self` but a new spatial size.
    pub fn zeros_like_with_grid(&self, h: usize, w: usize) -> Self {
        let [t, c, _, _] = self.shape;
        Self {
            values: vec![0.0; t * c * h * w],
            shape: [t, c, h, w],
            var_names: self.var_names.clone(),
            units: self.units.clone(),
            time_epoch: self.time_epoch.clone(),
            time_index: self.time_index.clone(),
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len_time(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.shape[2], self.shape[3])
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|v| v == name)
    }

    /// The `[h, w]` plane of variable `c` at time step `t`.
    pub fn plane(&self, t: usize, c: usize) -> &[f32] {
        let [_, ch, h, w] = self.shape;
        let start = (t * ch + c) * h * w;
        &self.values[start..start + h * w]
    }

    pub fn plane_mut(&mut self, t: usize, c: usize) -> &mut [f32] {
        let [_, ch, h, w] = self.shape;
        let start = (t * ch + c) * h * w;
        &mut self.values[start..start + h * w]
    }

    /// All variables at time step `t`, `[c, h, w]` contiguous.
    pub fn frame(&self, t: usize) -> &[f32] {
        let [_, c, h, w] = self.shape;
        &self.values[t * c * h * w..(t + 1) * c * h * w]
    }

    /// Time steps `start..end`.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        let [t, c, h, w] = self.shape;
        if start > end || end > t {
            return Err(Error::Invalid(format!("time slice {start}..{end} of {t} steps")));
        }
        let frame = c * h * w;
        Ok(Self {
            values: self.values[start * frame..end * frame].to_vec(),
            shape: [end - start, c, h, w],
            var_names: self.var_names.clone(),
            units: self.units.clone(),
            time_epoch: self.time_epoch.clone(),
            time_index: self.time_index[start..end].to_vec(),
        })
    }

    /// Gather the listed time steps (in the given order).
    pub fn select_time(&self, indices: &[usize]) -> Self {
        let [_, c, h, w] = self.shape;
        let mut values = Vec::with_capacity(indices.len() * c * h * w);
        for &i in indices {
            values.extend_from_slice(self.frame(i));
        }
        Self {
            values,
            shape: [indices.len(), c, h, w],
            var_names: self.var_names.clone(),
            units: self.units.clone(),
            time_epoch: self.time_epoch.clone(),
            time_index: indices.iter().map(|&i| self.time_index[i]).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Checks finiteness plus `pr >= 0` and `tmax >= tmin` when those variables are present.
    pub fn check_physical(&self) -> Result<()> {
        if !self.all_finite() {
            return Err(Error::Invalid("tensor contains NaN or Inf".into()));
        }
        let [t, _, _, _] = self.shape;
        if let Some(pr) = self.var_index("pr") {
            for ti in 0..t {
                if let Some(v) = self.plane(ti, pr).iter().find(|&&v| v < 0.0) {
                    return Err(Error::Invalid(format!("negative precipitation {v} at step {ti}")));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.var_index("tmin"), self.var_index("tmax")) {
            for ti in 0..t {
                if self.plane(ti, lo).iter().zip(self.plane(ti, hi)).any(|(a, b)| b < a) {
                    return Err(Error::Invalid(format!("tmax < tmin at step {ti}")));
                }
            }
        }
        Ok(())
    }
}
