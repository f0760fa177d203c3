//! Evaluation metrics: histograms, radially averaged power spectra, ensemble CRPS and MAE.

mod plots;
mod report;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::data::{upsample_nn, FieldTensor};
use crate::spectral::{signed_freq, Fft2};
use crate::{Error, Result};

pub use report::{
    build_report, CellCoverage, CoverageRow, EvalConfig, EvalReport, ExtremesSummary, ModelInfo, Prediction, ScoreRow,
    Spread, BASELINE, REPORT_FILE, REPORT_SCHEMA_VERSION, TRUTH,
};

pub const DEFAULT_BINS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Incremental histogram on `bins` equal-width bins spanning `[lo, hi]`;
/// values outside are clamped to the end bins.
#[derive(Debug, Clone)]
pub struct HistogramBuilder {
    lo: f64,
    width: f64,
    counts: Vec<u64>,
}

impl HistogramBuilder {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::Invalid(format!("histogram needs bins >= 1 and a finite range, got {bins} on [{lo}, {hi}]")));
        }
        let hi = if hi > lo { hi } else { lo + 1.0 };
        Ok(Self { lo, width: (hi - lo) / bins as f64, counts: vec![0; bins] })
    }

    pub fn add(&mut self, v: f64) {
        let last = self.counts.len() - 1;
        let b = ((v - self.lo) / self.width).floor();
        let b = if b.is_nan() { 0 } else { (b.max(0.0) as usize).min(last) };
        self.counts[b] += 1;
    }

    pub fn finish(self) -> Result<Histogram> {
        if self.counts.iter().all(|&c| c == 0) {
            return Err(Error::Invalid("histogram of an empty sample".into()));
        }
        let edges = (0..=self.counts.len()).map(|i| self.lo + self.width * i as f64).collect();
        Ok(Histogram { edges, counts: self.counts })
    }
}

/// Counts on `bins` equal-width bins spanning `[lo, hi]`; values outside are clamped to the end bins.
pub fn histogram(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    let mut h = HistogramBuilder::new(lo, hi, bins)?;
    for v in values {
        h.add(v);
    }
    h.finish()
}

/// Histogram over the sample's own range.
pub fn log_freq_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Invalid("histogram of an empty sample".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    histogram(values.iter().copied(), lo, hi, bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdResult {
    /// Radial wavenumbers `0..=N/2` in cycles per grid length.
    pub wavenumbers: Vec<f64>,
    pub power: Vec<f64>,
    pub n_modes: Vec<usize>,
}

/// `|X(k)|^2 / N^2` for every mode of an `n x n` field, row-major.
pub fn power_spectrum(field: &[f64], n: usize, hann: bool) -> Result<Vec<f64>> {
    if field.len() != n * n || n == 0 {
        return Err(Error::Shape(format!("power spectrum needs a square field, got {} values for n={n}", field.len())));
    }
    let win: Vec<f64> = (0..n)
        .map(|i| if hann { 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos() } else { 1.0 })
        .collect();
    let mut buf: Vec<Complex<f64>> =
        field.iter().enumerate().map(|(p, &v)| Complex::new(v * win[p / n] * win[p % n], 0.0)).collect();
    Fft2::new(n, n).forward(&mut buf);
    let norm = (n * n) as f64;
    Ok(buf.iter().map(|c| c.norm_sqr() / norm).collect())
}

/// Radial bin of every mode; `None` beyond the Nyquist radius.
fn radial_bins(n: usize) -> Vec<Option<usize>> {
    let half = n / 2;
    (0..n * n)
        .map(|p| {
            let (ky, kx) = (signed_freq(p / n, n), signed_freq(p % n, n));
            let r = (kx * kx + ky * ky).sqrt().round() as usize;
            (r <= half).then_some(r)
        })
        .collect()
}

/// Running mean of radially binned spectra of `n x n` fields.
#[derive(Debug, Clone)]
pub struct PsdAccumulator {
    n: usize,
    hann: bool,
    bins: Vec<Option<usize>>,
    n_modes: Vec<usize>,
    power: Vec<f64>,
    count: usize,
}

impl PsdAccumulator {
    pub fn new(n: usize, hann: bool) -> Self {
        let bins = radial_bins(n);
        let mut n_modes = vec![0usize; n / 2 + 1];
        for b in bins.iter().flatten() {
            n_modes[*b] += 1;
        }
        Self { n, hann, bins, power: vec![0.0; n_modes.len()], n_modes, count: 0 }
    }

    fn accumulate(&mut self, spec: &[f64]) {
        for (s, b) in spec.iter().zip(&self.bins) {
            if let Some(b) = b {
                self.power[*b] += s;
            }
        }
        self.count += 1;
    }

    pub fn add(&mut self, field: &[f64]) -> Result<()> {
        let spec = power_spectrum(field, self.n, self.hann)?;
        self.accumulate(&spec);
        Ok(())
    }

    /// Same as adding each field in order; the transforms run in parallel.
    pub fn add_all(&mut self, fields: &[Vec<f64>]) -> Result<()> {
        let specs: Vec<Vec<f64>> =
            fields.par_iter().map(|f| power_spectrum(f, self.n, self.hann)).collect::<Result<_>>()?;
        for s in &specs {
            self.accumulate(s);
        }
        Ok(())
    }

    pub fn finish(self) -> Result<PsdResult> {
        if self.count == 0 {
            return Err(Error::Invalid("power spectrum of an empty sample".into()));
        }
        let power = self.power.iter().zip(&self.n_modes).map(|(p, &m)| p / (m * self.count) as f64).collect();
        Ok(PsdResult { wavenumbers: (0..self.n_modes.len()).map(|k| k as f64).collect(), power, n_modes: self.n_modes })
    }
}

/// Mean spectral power per radial wavenumber, averaged over `fields` (each `n x n`).
pub fn mean_azimuthal_psd<'a>(fields: impl IntoIterator<Item = &'a [f64]>, n: usize, hann: bool) -> Result<PsdResult> {
    let mut acc = PsdAccumulator::new(n, hann);
    for f in fields {
        acc.add(f)?;
    }
    acc.finish()
}

pub fn azimuthal_psd(field: &[f64], n: usize) -> Result<PsdResult> {
    mean_azimuthal_psd(std::iter::once(field), n, false)
}

/// Dataset PSD of one variable: mean over every time step (and member).
pub fn field_psd(t: &FieldTensor, channel: usize, hann: bool) -> Result<PsdResult> {
    let [steps, _, h, w] = t.shape();
    if h != w {
        return Err(Error::Shape(format!("power spectrum needs a square grid, got {h}x{w}")));
    }
    let planes: Vec<Vec<f64>> =
        (0..steps).map(|s| t.plane(s, channel).iter().map(|&v| v as f64).collect()).collect();
    let mut acc = PsdAccumulator::new(h, hann);
    acc.add_all(&planes)?;
    acc.finish()
}

/// Ensemble CRPS from sorted members: `(1/M) sum |x_j - y| - S / M^2` with `S = sum_{j<k} |x_j - x_k|`,
/// or `S / (M (M - 1))` for the fair form.
pub fn ensemble_crps(members: &[f64], y: f64, fair: bool) -> f64 {
    let m = members.len();
    assert!(m >= 1, "CRPS needs at least one member");
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    let skill = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / m as f64;
    let pairs: f64 = sorted.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - m as f64 + 1.0) * x).sum();
    let spread = if fair {
        if m < 2 {
            0.0
        } else {
            pairs / (m * (m - 1)) as f64
        }
    } else {
        pairs / (m * m) as f64
    };
    skill - spread
}

pub fn mae(pred: &[f64], y: &[f64]) -> Result<f64> {
    if pred.len() != y.len() || y.is_empty() {
        return Err(Error::Shape(format!("MAE of {} predictions against {} targets", pred.len(), y.len())));
    }
    Ok(pred.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Nearest-neighbour upsampling of the coarse field.
pub fn nn_baseline(lr: &FieldTensor, factor: usize) -> Result<FieldTensor> {
    upsample_nn(lr, factor)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self { mean, std }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pinned_crps() {
        assert!((ensemble_crps(&[0.0, 2.0], 1.0, false) - 0.5).abs() < 1e-15);
        assert_eq!(ensemble_crps(&[3.0], 1.0, false), 2.0);
        assert_eq!(ensemble_crps(&[1.0; 4], 1.0, true), 0.0);
    }

    #[test]
    fn all_zero_precipitation_fills_the_first_bin() {
        let h = log_freq_histogram(&[0.0; 50], DEFAULT_BINS).unwrap();
        assert_eq!(h.counts[0], 50);
        assert_eq!(h.edges.len(), 101);
        assert!(log_freq_histogram(&[], 10).is_err());
    }

    #[test]
    fn constant_field_is_dc_only() {
        let psd = azimuthal_psd(&[2.5; 64], 8).unwrap();
        assert!(psd.power[0] > 0.0);
        assert!(psd.power[1..].iter().all(|&p| p.abs() < 1e-20));
        assert_eq!(psd.wavenumbers.len(), 5);
    }

    #[test]
    fn non_square_grid_is_rejected() {
        assert!(power_spectrum(&[0.0; 12], 4, false).is_err());
    }

    proptest! {
        #[test]
        fn histogram_conserves_counts(xs in proptest::collection::vec(-100.0f64..100.0, 1..300), bins in 1usize..50) {
            let h = log_freq_histogram(&xs, bins).unwrap();
            prop_assert_eq!(h.total(), xs.len() as u64);
        }

        #[test]
        fn crps_is_bounded_by_mean_absolute_error(xs in proptest::collection::vec(-10.0f64..10.0, 1..8), y in -10.0f64..10.0) {
            let skill = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / xs.len() as f64;
            prop_assert!(ensemble_crps(&xs, y, false) <= skill + 1e-12);
            prop_assert!(ensemble_crps(&xs, y, false) >= -1e-12);
        }
    }
}
