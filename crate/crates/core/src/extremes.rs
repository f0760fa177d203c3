//! Annual-maximum extremes: GEV fits, return levels, bootstrap bands and coverage.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DAYS_PER_YEAR;
use crate::{seed, Error, Result};

/// Below this `|xi|` the Gumbel limit is used.
pub const GUMBEL_EPS: f64 = 1e-8;
pub const XI_BOUNDS: (f64, f64) = (-0.5, 0.5);
pub const MIN_MAXIMA: usize = 10;
pub const DEFAULT_BOOTSTRAP: usize = 1000;
const EULER_GAMMA: f64 = 0.5772156649015329;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() || !xi.is_finite() {
            return Err(Error::Invalid(format!("GEV needs finite parameters and sigma > 0, got ({mu}, {sigma}, {xi})")));
        }
        Ok(Self { mu, sigma, xi })
    }

    fn is_gumbel(&self) -> bool {
        self.xi.abs() < GUMBEL_EPS
    }

    /// `t(x)` with `F(x) = exp(-t(x))`; `None` outside the support.
    fn t(&self, x: f64) -> Option<f64> {
        let z = (x - self.mu) / self.sigma;
        if self.is_gumbel() {
            return Some((-z).exp());
        }
        let a = self.xi * z;
        if a <= -1.0 {
            return None;
        }
        Some((-a.ln_1p() / self.xi).exp())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.t(x) {
            Some(t) => (-t).exp(),
            None if self.xi > 0.0 => 0.0,
            None => 1.0,
        }
    }

    /// Inverse cdf for `p` in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        let y = -p.ln();
        if self.is_gumbel() {
            self.mu - self.sigma * y.ln()
        } else {
            self.mu + self.sigma * (-self.xi * y.ln()).exp_m1() / self.xi
        }
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        if self.is_gumbel() {
            return -self.sigma.ln() - z - (-z).exp();
        }
        let a = self.xi * z;
        if a <= -1.0 {
            return f64::NEG_INFINITY;
        }
        let l = a.ln_1p();
        -self.sigma.ln() - (1.0 + 1.0 / self.xi) * l - (-l / self.xi).exp()
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        data.iter().map(|&x| self.logpdf(x)).sum()
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                self.quantile(u.max(f64::MIN_POSITIVE))
            })
            .collect()
    }
}

/// Level exceeded with probability `1 / period` per year.
pub fn return_level(params: &GevParams, period: f64) -> Result<f64> {
    if !(period > 1.0) {
        return Err(Error::Invalid(format!("return period must exceed 1 year, got {period}")));
    }
    Ok(params.quantile(1.0 - 1.0 / period))
}

fn mean_std(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Method-of-moments Gumbel starting point.
pub fn gumbel_moments(data: &[f64]) -> GevParams {
    let (mean, std) = mean_std(data);
    let sigma = std * 6f64.sqrt() / std::f64::consts::PI;
    GevParams { mu: mean - EULER_GAMMA * sigma, sigma, xi: 0.0 }
}

struct Simplex {
    points: Vec<[f64; 3]>,
    values: Vec<f64>,
}

/// Nelder-Mead minimization; returns the best point, its value and whether it converged.
fn nelder_mead(f: &impl Fn(&[f64; 3]) -> f64, start: [f64; 3], step: [f64; 3], max_iter: usize) -> ([f64; 3], f64, bool) {
    let mut s = Simplex { points: vec![start], values: vec![f(&start)] };
    for i in 0..3 {
        let mut p = start;
        p[i] += step[i];
        s.values.push(f(&p));
        s.points.push(p);
    }
    let (alpha, gamma, rho, shrink) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| s.values[a].total_cmp(&s.values[b]));
        s.points = order.iter().map(|&i| s.points[i]).collect();
        s.values = order.iter().map(|&i| s.values[i]).collect();

        let spread = (s.values[3] - s.values[0]).abs();
        let size = (1..4)
            .map(|i| (0..3).map(|k| (s.points[i][k] - s.points[0][k]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if s.values[0].is_finite() && spread <= 1e-12 * (1.0 + s.values[0].abs()) && size < 1e-9 {
            return (s.points[0], s.values[0], true);
        }

        let mut centroid = [0.0; 3];
        for p in &s.points[..3] {
            for k in 0..3 {
                centroid[k] += p[k] / 3.0;
            }
        }
        let along = |t: f64| -> [f64; 3] { std::array::from_fn(|k| centroid[k] + t * (s.points[3][k] - centroid[k])) };
        let xr = along(-alpha);
        let fr = f(&xr);
        if fr < s.values[0] {
            let xe = along(-gamma);
            let fe = f(&xe);
            if fe < fr {
                (s.points[3], s.values[3]) = (xe, fe);
            } else {
                (s.points[3], s.values[3]) = (xr, fr);
            }
            continue;
        }
        if fr < s.values[2] {
            (s.points[3], s.values[3]) = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < s.values[3] {
            let x = along(-rho);
            (x, f(&x))
        } else {
            let x = along(rho);
            (x, f(&x))
        };
        if fc < s.values[3].min(fr) {
            (s.points[3], s.values[3]) = (xc, fc);
            continue;
        }
        let best = s.points[0];
        for i in 1..4 {
            s.points[i] = std::array::from_fn(|k| best[k] + shrink * (s.points[i][k] - best[k]));
            s.values[i] = f(&s.points[i]);
        }
    }
    let i = (0..4).min_by(|&a, &b| s.values[a].total_cmp(&s.values[b])).expect("four vertices");
    (s.points[i], s.values[i], false)
}

/// Maximum-likelihood GEV fit with `xi` restricted to [`XI_BOUNDS`].
pub fn fit_gev(maxima: &[f64]) -> Result<GevParams> {
    if maxima.len() < MIN_MAXIMA {
        return Err(Error::Invalid(format!("GEV fit needs at least {MIN_MAXIMA} maxima, got {}", maxima.len())));
    }
    if maxima.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("maxima must be finite".into()));
    }
    let init = gumbel_moments(maxima);
    if !(init.sigma > 0.0) || !init.sigma.is_finite() {
        return Err(Error::NonConvergence { reason: "maxima have zero spread; likelihood is unbounded".into(), best: init });
    }
    let nll = |v: &[f64; 3]| -> f64 {
        if v[2] < XI_BOUNDS.0 || v[2] > XI_BOUNDS.1 {
            return f64::INFINITY;
        }
        let p = GevParams { mu: v[0], sigma: v[1].exp(), xi: v[2] };
        let ll = p.log_likelihood(maxima);
        if ll.is_nan() {
            f64::INFINITY
        } else {
            -ll
        }
    };
    let mut x = [init.mu, init.sigma.ln(), 0.0];
    let mut step = [0.25 * init.sigma, 0.2, 0.1];
    let mut converged = false;
    let mut value = nll(&x);
    // Restart from the optimum until a fresh simplex stops improving.
    for _ in 0..6 {
        let (nx, nv, ok) = nelder_mead(&nll, x, step, 4000);
        let improved = nv < value - 1e-10 * (1.0 + value.abs());
        (x, value) = (nx, nv);
        converged = ok;
        if ok && !improved {
            break;
        }
        step = [0.05 * init.sigma, 0.05, 0.02];
    }
    let best = GevParams { mu: x[0], sigma: x[1].exp(), xi: x[2] };
    if !converged || !value.is_finite() {
        return Err(Error::NonConvergence { reason: "simplex search did not settle".into(), best });
    }
    Ok(best)
}

/// Per-year maxima of a daily series indexed by day offsets; incomplete years are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualMaxima {
    pub years: Vec<i64>,
    pub maxima: Vec<f64>,
}

pub fn annual_maxima(values: &[f64], days: &[i64]) -> Result<AnnualMaxima> {
    if values.len() != days.len() {
        return Err(Error::Shape(format!("{} values for {} days", values.len(), days.len())));
    }
    let mut per_year: std::collections::BTreeMap<i64, (usize, f64)> = Default::default();
    for (&v, &d) in values.iter().zip(days) {
        let e = per_year.entry(d.div_euclid(DAYS_PER_YEAR)).or_insert((0, f64::NEG_INFINITY));
        e.0 += 1;
        e.1 = e.1.max(v);
    }
    let mut out = AnnualMaxima { years: Vec::new(), maxima: Vec::new() };
    for (year, (count, max)) in per_year {
        if count as i64 == DAYS_PER_YEAR {
            out.years.push(year);
            out.maxima.push(max);
        } else {
            log::warn!("year {year} has {count} of {DAYS_PER_YEAR} days; excluded from annual maxima");
        }
    }
    Ok(out)
}

/// Log-spaced return periods in years.
pub fn period_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub const GRID_PERIODS: (f64, f64) = (2.0, 50.0);
pub const GRID_POINTS: usize = 20;

pub fn default_period_grid() -> Vec<f64> {
    period_grid(GRID_PERIODS.0, GRID_PERIODS.1, GRID_POINTS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelCurve {
    pub cell: (usize, usize),
    pub periods: Vec<f64>,
    pub point: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
}

/// Linear-interpolated empirical quantile of sorted data.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: DEFAULT_BOOTSTRAP, level: 0.95, seed: 0 }
    }
}

/// Parametric-bootstrap confidence bands for the return levels of `params`.
///
/// Each replicate draws `n_years` maxima from `params` with the stream `(seed, replicate)`
/// and refits. More than 10% failed refits is an error.
pub fn bootstrap_bands(
    params: &GevParams,
    n_years: usize,
    periods: &[f64],
    cfg: &BootstrapConfig,
    cell: (usize, usize),
) -> Result<ReturnLevelCurve> {
    if cfg.replicates < 2 || !(0.0 < cfg.level && cfg.level < 1.0) {
        return Err(Error::Invalid(format!("bootstrap needs >= 2 replicates and level in (0, 1), got {cfg:?}")));
    }
    let point = periods.iter().map(|&t| return_level(params, t)).collect::<Result<Vec<_>>>()?;
    let fits: Vec<Option<Vec<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(cfg.seed, &[b as u64]);
            let sample = params.sample(&mut rng, n_years);
            fit_gev(&sample).ok().map(|p| periods.iter().map(|&t| p.quantile(1.0 - 1.0 / t)).collect())
        })
        .collect();
    let ok: Vec<Vec<f64>> = fits.into_iter().flatten().collect();
    let failed = cfg.replicates - ok.len();
    if failed * 10 > cfg.replicates {
        return Err(Error::Bootstrap { failed, total: cfg.replicates });
    }
    let tail = (1.0 - cfg.level) / 2.0;
    let (mut lower95, mut upper95) = (Vec::new(), Vec::new());
    for j in 0..periods.len() {
        let mut col: Vec<f64> = ok.iter().map(|r| r[j]).collect();
        col.sort_by(f64::total_cmp);
        lower95.push(sorted_quantile(&col, tail));
        upper95.push(sorted_quantile(&col, 1.0 - tail));
    }
    Ok(ReturnLevelCurve { cell, periods: periods.to_vec(), point, lower95, upper95 })
}

/// Gringorten plotting positions: sorted maxima with `T_i = 1 / (1 - (i - 0.44) / (n + 0.12))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalLevels {
    pub periods: Vec<f64>,
    pub levels: Vec<f64>,
}

impl EmpiricalLevels {
    /// Pool point sets, e.g. one per ensemble member.
    pub fn pooled(parts: &[EmpiricalLevels]) -> Self {
        let mut pts: Vec<(f64, f64)> =
            parts.iter().flat_map(|p| p.periods.iter().copied().zip(p.levels.iter().copied())).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Self { periods: pts.iter().map(|p| p.0).collect(), levels: pts.iter().map(|p| p.1).collect() }
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }
}

pub fn empirical_return_levels(maxima: &[f64]) -> Result<EmpiricalLevels> {
    if maxima.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 maxima, got {}", maxima.len())));
    }
    let mut levels = maxima.to_vec();
    levels.sort_by(f64::total_cmp);
    let n = levels.len() as f64;
    let periods = (1..=levels.len()).map(|i| 1.0 / (1.0 - (i as f64 - 0.44) / (n + 0.12))).collect();
    Ok(EmpiricalLevels { periods, levels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub inside: usize,
    pub evaluated: usize,
    /// Points whose period falls outside the band grid.
    pub excluded: usize,
}

pub const GOOD_COVERAGE: f64 = 0.95;

impl Coverage {
    pub fn fraction(&self) -> f64 {
        if self.evaluated == 0 {
            f64::NAN
        } else {
            self.inside as f64 / self.evaluated as f64
        }
    }

    pub fn is_good(&self) -> bool {
        self.fraction() >= GOOD_COVERAGE
    }

    pub fn merge(self, other: Coverage) -> Coverage {
        Coverage {
            inside: self.inside + other.inside,
            evaluated: self.evaluated + other.evaluated,
            excluded: self.excluded + other.excluded,
        }
    }
}

/// Value of a curve at `t`, interpolating linearly in `ln T`; `None` outside the grid.
pub fn interpolate_log(periods: &[f64], values: &[f64], t: f64) -> Option<f64> {
    let (first, last) = (*periods.first()?, *periods.last()?);
    if t < first || t > last {
        return None;
    }
    let j = periods.partition_point(|&p| p < t);
    if j == 0 {
        return Some(values[0]);
    }
    let (t0, t1) = (periods[j - 1].ln(), periods[j].ln());
    let w = (t.ln() - t0) / (t1 - t0);
    Some(values[j - 1] + w * (values[j] - values[j - 1]))
}

/// Share of empirical points inside the bands; points outside the period grid are not counted.
pub fn coverage_verdict(curve: &ReturnLevelCurve, empirical: &EmpiricalLevels) -> Result<Coverage> {
    if empirical.is_empty() {
        return Err(Error::Invalid("no empirical return levels to compare".into()));
    }
    let mut c = Coverage { inside: 0, evaluated: 0, excluded: 0 };
    for (&t, &level) in empirical.periods.iter().zip(&empirical.levels) {
        let lo = interpolate_log(&curve.periods, &curve.lower95, t);
        let hi = interpolate_log(&curve.periods, &curve.upper95, t);
        match (lo, hi) {
            (Some(lo), Some(hi)) => {
                c.evaluated += 1;
                if lo <= level && level <= hi {
                    c.inside += 1;
                }
            }
            _ => c.excluded += 1,
        }
    }
    Ok(c)
}
