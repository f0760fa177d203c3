use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::FieldTensor;
use crate::{Error, Result};

pub const DAYS_PER_YEAR: i64 = 365;

/// Consecutive train / validation / test periods, in whole years of day offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_years: u32,
    pub val_years: u32,
    pub test_years: u32,
    /// Years of the test period used for return levels.
    pub test_extension_years: u32,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_years: 10, val_years: 2, test_years: 30, test_extension_years: 30 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_years == 0 || self.val_years == 0 || self.test_years == 0 {
            return Err(Error::Config(format!("every split needs at least one year: {self:?}")));
        }
        if self.test_extension_years > self.test_years {
            return Err(Error::Config("test_extension_years exceeds test_years".into()));
        }
        Ok(())
    }

    pub fn total_years(&self) -> u32 {
        self.train_years + self.val_years + self.test_years
    }

    fn days(years: u32) -> i64 {
        years as i64 * DAYS_PER_YEAR
    }

    pub fn train_range(&self) -> Range<i64> {
        0..Self::days(self.train_years)
    }

    pub fn val_range(&self) -> Range<i64> {
        let start = self.train_range().end;
        start..start + Self::days(self.val_years)
    }

    pub fn test_range(&self) -> Range<i64> {
        let start = self.val_range().end;
        start..start + Self::days(self.test_years)
    }

    /// Split a tensor by its day offsets. Steps outside every range are dropped.
    pub fn apply(&self, t: &FieldTensor) -> Result<Splits> {
        self.validate()?;
        let pick = |r: Range<i64>| -> Vec<usize> {
            t.time_index.iter().enumerate().filter(|(_, d)| r.contains(d)).map(|(i, _)| i).collect()
        };
        Ok(Splits {
            train: t.select_time(&pick(self.train_range())),
            val: t.select_time(&pick(self.val_range())),
            test: t.select_time(&pick(self.test_range())),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: FieldTensor,
    pub val: FieldTensor,
    pub test: FieldTensor,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_ordered_and_disjoint() {
        let s = SplitSpec::default();
        let (a, b, c) = (s.train_range(), s.val_range(), s.test_range());
        assert_eq!(a.end, b.start);
        assert_eq!(b.end, c.start);
        assert!(a.start < a.end && b.start < b.end && c.start < c.end);
        assert_eq!(c.end, s.total_years() as i64 * DAYS_PER_YEAR);
    }

    #[test]
    fn apply_partitions_every_step_once() {
        let s = SplitSpec { train_years: 2, val_years: 1, test_years: 1, test_extension_years: 1 };
        let n = (s.total_years() as i64 * DAYS_PER_YEAR) as usize;
        let t = FieldTensor::climate(vec![0.0; n * 3], [n, 3, 1, 1], (0..n as i64).collect()).unwrap();
        let parts = s.apply(&t).unwrap();
        assert_eq!(parts.train.len_time() + parts.val.len_time() + parts.test.len_time(), n);
        assert!(parts.train.time_index.iter().all(|d| s.train_range().contains(d)));
        assert!(parts.val.time_index.iter().all(|d| s.val_range().contains(d)));
        assert!(parts.test.time_index.iter().all(|d| s.test_range().contains(d)));
    }
}
