//! Evaluation report: `report.json`, `tables/*.csv` and `figures/*.svg`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    ensemble_crps, nn_baseline, plots, Histogram, HistogramBuilder, MeanStd, PsdAccumulator, PsdResult, DEFAULT_BINS,
};
use crate::data::{coarsen, FieldTensor, TensorHeader, TensorReader, PR};
use crate::extremes::{
    annual_maxima, bootstrap_bands, coverage_verdict, default_period_grid, empirical_return_levels, fit_gev,
    BootstrapConfig, Coverage, EmpiricalLevels, ReturnLevelCurve, DEFAULT_BOOTSTRAP, MIN_MAXIMA,
};
use crate::{seed, Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const BASELINE: &str = "nn_baseline";
pub const TRUTH: &str = "truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Coarsening factor used to rebuild the low-resolution input for the baseline.
    pub factor: usize,
    pub bins: usize,
    /// Use the fair CRPS estimator instead of the standard one.
    pub fair_crps: bool,
    /// Hann window before the FFT.
    pub hann: bool,
    /// Cells with return-level figures; empty selects two cells automatically.
    pub return_level_cells: Vec<(usize, usize)>,
    /// Coverage is evaluated on a `lattice x lattice` grid of cells.
    pub lattice: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            factor: 8,
            bins: DEFAULT_BINS,
            fair_crps: false,
            hann: false,
            return_level_cells: Vec::new(),
            lattice: 4,
            bootstrap: DEFAULT_BOOTSTRAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub variable: String,
    /// Absent for the deterministic baseline.
    pub crps: Option<MeanStd>,
    pub mae: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub model: String,
    pub variable: String,
    /// Mean absolute difference over member pairs, pixels and days.
    pub mean_pairwise_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub source: String,
    pub inside: usize,
    pub evaluated: usize,
    pub excluded: usize,
    pub fraction: f64,
    pub good: bool,
}

impl CoverageRow {
    fn new(source: &str, c: Coverage) -> Self {
        Self {
            source: source.to_string(),
            inside: c.inside,
            evaluated: c.evaluated,
            excluded: c.excluded,
            fraction: c.fraction(),
            good: c.is_good(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCoverage {
    pub cell: (usize, usize),
    pub rows: Vec<CoverageRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremesSummary {
    pub variable: String,
    pub years: usize,
    pub bootstrap: usize,
    pub periods: Vec<f64>,
    pub return_level_cells: Vec<(usize, usize)>,
    /// Pooled over all evaluated cells; the truth row is the self-consistency check.
    pub coverage: Vec<CoverageRow>,
    pub cells: Vec<CellCoverage>,
    /// Cells skipped because the fit failed.
    pub failed_cells: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub days: usize,
    pub grid: (usize, usize),
    pub variables: Vec<String>,
    pub units: Vec<String>,
    pub models: Vec<ModelInfo>,
    pub scores: Vec<ScoreRow>,
    pub spread: Vec<Spread>,
    /// Absent when the record is shorter than the minimum needed for a fit.
    pub extremes: Option<ExtremesSummary>,
    pub tables: Vec<String>,
    pub figures: Vec<String>,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn score(&self, model: &str, variable: &str) -> Option<&ScoreRow> {
        self.scores.iter().find(|r| r.model == model && r.variable == variable)
    }

    pub fn spread_of(&self, model: &str, variable: &str) -> Option<f64> {
        self.spread.iter().find(|r| r.model == model && r.variable == variable).map(|r| r.mean_pairwise_l1)
    }

    pub fn coverage_of(&self, source: &str) -> Option<&CoverageRow> {
        self.extremes.as_ref()?.coverage.iter().find(|r| r.source == source)
    }
}

/// Source of a prediction ensemble `[T * M, C, H, W]`.
#[derive(Debug, Clone)]
pub enum Prediction {
    Tensor(FieldTensor),
    /// Tensor file, read in blocks of days.
    File(PathBuf),
}

#[derive(Clone, Copy)]
enum Source<'a> {
    Memory(&'a FieldTensor),
    File(&'a Path),
}

impl<'a> From<&'a Prediction> for Source<'a> {
    fn from(p: &'a Prediction) -> Self {
        match p {
            Prediction::Tensor(t) => Source::Memory(t),
            Prediction::File(f) => Source::File(f),
        }
    }
}

/// Days per block when streaming.
const BLOCK_DAYS: usize = 32;

impl Source<'_> {
    fn header(self) -> Result<TensorHeader> {
        match self {
            Source::Memory(t) => Ok(TensorHeader::for_tensor(t)),
            Source::File(p) => Ok(TensorReader::open(p)?.header().clone()),
        }
    }

    /// Calls `f(first_step, block)` over consecutive blocks of `steps` time steps.
    fn for_each_block(self, steps: usize, mut f: impl FnMut(usize, &FieldTensor) -> Result<()>) -> Result<()> {
        match self {
            Source::Memory(t) => {
                let n = t.len_time();
                let mut start = 0;
                while start < n {
                    let end = (start + steps).min(n);
                    f(start, &t.slice_time(start, end)?)?;
                    start = end;
                }
            }
            Source::File(p) => {
                let mut r = TensorReader::open(p)?;
                let mut start = 0;
                while r.remaining() > 0 {
                    let block = r.read_frames(steps)?;
                    f(start, &block)?;
                    start += block.len_time();
                }
            }
        }
        Ok(())
    }

    /// Per-channel `(min, max)`.
    fn range(self, channels: usize) -> Result<Vec<(f64, f64)>> {
        let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); channels];
        self.for_each_block(BLOCK_DAYS, |_, b| {
            for t in 0..b.len_time() {
                for (c, (lo, hi)) in r.iter_mut().enumerate() {
                    for &v in b.plane(t, c) {
                        *lo = lo.min(v as f64);
                        *hi = hi.max(v as f64);
                    }
                }
            }
            Ok(())
        })?;
        Ok(r)
    }
}

/// Checks the prediction header against the truth and returns the member count.
fn align(name: &str, pred: &TensorHeader, truth: &FieldTensor) -> Result<usize> {
    let [tp, cp, hp, wp] = pred.shape;
    let [tt, ct, ht, wt] = truth.shape();
    if (cp, hp, wp) != (ct, ht, wt) || pred.vars != truth.var_names {
        return Err(Error::Shape(format!("{name}: prediction [{cp}, {hp}, {wp}] vs truth [{ct}, {ht}, {wt}]")));
    }
    if tt == 0 || tp == 0 || tp % tt != 0 {
        return Err(Error::Misaligned(format!("{name}: {tp} prediction steps for {tt} truth days")));
    }
    let members = tp / tt;
    for (d, &day) in truth.time_index.iter().enumerate() {
        if pred.time_index[d * members..(d + 1) * members].iter().any(|&x| x != day) {
            return Err(Error::Misaligned(format!(
                "{name}: prediction steps {}..{} do not all carry day {day}",
                d * members,
                (d + 1) * members
            )));
        }
    }
    if pred.time_epoch != truth.time_epoch {
        return Err(Error::Misaligned(format!("{name}: epoch {:?} vs {:?}", pred.time_epoch, truth.time_epoch)));
    }
    Ok(members)
}

struct Ensemble<'a> {
    name: &'a str,
    source: Source<'a>,
    members: usize,
}

/// What one pass over a source collects.
struct Plan<'a> {
    truth: &'a FieldTensor,
    fair: bool,
    score: bool,
    /// Per-channel histogram ranges; `None` skips histograms.
    ranges: Option<&'a [(f64, f64)]>,
    bins: usize,
    hann: bool,
    /// Pixel offsets whose precipitation series are kept.
    cells: &'a [usize],
}

#[derive(Default)]
struct Scan {
    /// Per channel, per day.
    crps: Vec<Vec<f64>>,
    mae: Vec<Vec<f64>>,
    spread: Vec<f64>,
    hists: Vec<Histogram>,
    psds: Vec<PsdResult>,
    /// `[cell][member][day]`.
    series: Vec<Vec<Vec<f64>>>,
}

/// Spatial means of CRPS, ensemble-mean absolute error and mean pairwise spread for one day.
fn score_day(block: &FieldTensor, k: usize, m: usize, y: &[f32], c: usize, fair: bool) -> (f64, f64, f64) {
    let hw = y.len();
    let (mut crps, mut mae, mut spread) = (0.0, 0.0, 0.0);
    let mut xs = vec![0.0; m];
    for p in 0..hw {
        for (j, x) in xs.iter_mut().enumerate() {
            *x = block.plane(k * m + j, c)[p] as f64;
        }
        let yv = y[p] as f64;
        crps += ensemble_crps(&xs, yv, fair);
        mae += (xs.iter().sum::<f64>() / m as f64 - yv).abs();
        if m > 1 {
            xs.sort_by(f64::total_cmp);
            let s: f64 = xs.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - m as f64 + 1.0) * x).sum();
            spread += s / (m * (m - 1) / 2) as f64;
        }
    }
    (crps / hw as f64, mae / hw as f64, spread / hw as f64)
}

fn scan(src: Source<'_>, m: usize, plan: &Plan<'_>) -> Result<Scan> {
    let [days, channels, h, w] = plan.truth.shape();
    let mut crps = vec![Vec::with_capacity(days); channels];
    let mut mae = vec![Vec::with_capacity(days); channels];
    let mut spread = vec![0.0; channels];
    let mut hists = match plan.ranges {
        Some(r) => r.iter().map(|&(lo, hi)| HistogramBuilder::new(lo, hi, plan.bins)).collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let mut psds: Vec<PsdAccumulator> =
        if h == w { (0..channels).map(|_| PsdAccumulator::new(h, plan.hann)).collect() } else { Vec::new() };
    let mut series = vec![vec![Vec::with_capacity(days); m]; plan.cells.len()];
    src.for_each_block(BLOCK_DAYS * m, |first, block| {
        let day0 = first / m;
        let n = block.len_time() / m;
        for c in 0..channels {
            if plan.score {
                let per_day: Vec<(f64, f64, f64)> = (0..n)
                    .into_par_iter()
                    .map(|k| score_day(block, k, m, plan.truth.plane(day0 + k, c), c, plan.fair))
                    .collect();
                for r in per_day {
                    crps[c].push(r.0);
                    mae[c].push(r.1);
                    spread[c] += r.2;
                }
            }
            if let Some(hist) = hists.get_mut(c) {
                for t in 0..block.len_time() {
                    for &v in block.plane(t, c) {
                        hist.add(v as f64);
                    }
                }
            }
            if let Some(acc) = psds.get_mut(c) {
                let planes: Vec<Vec<f64>> =
                    (0..block.len_time()).map(|t| block.plane(t, c).iter().map(|&v| v as f64).collect()).collect();
                acc.add_all(&planes)?;
            }
        }
        for (cell, &p) in series.iter_mut().zip(plan.cells) {
            for k in 0..n {
                for (j, s) in cell.iter_mut().enumerate() {
                    s.push(block.plane(k * m + j, PR)[p] as f64);
                }
            }
        }
        Ok(())
    })?;
    Ok(Scan {
        crps,
        mae,
        spread: spread.into_iter().map(|x| x / days as f64).collect(),
        hists: hists.into_iter().map(HistogramBuilder::finish).collect::<Result<_>>()?,
        psds: psds.into_iter().map(PsdAccumulator::finish).collect::<Result<_>>()?,
        series,
    })
}

fn lattice_cells(n: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    let pos = |k: usize, size: usize| ((2 * k + 1) * size) / (2 * n);
    (0..n).flat_map(|i| (0..n).map(move |j| (pos(i, h), pos(j, w)))).collect()
}

/// Cells used by the extremes section.
struct CellPlan {
    lattice: Vec<(usize, usize)>,
    plotted: Vec<(usize, usize)>,
    /// Lattice cells followed by any extra plotted cells.
    cells: Vec<(usize, usize)>,
}

impl CellPlan {
    fn new(cfg: &EvalConfig, h: usize, w: usize) -> Result<Self> {
        let lattice = lattice_cells(cfg.lattice.min(h).min(w), h, w);
        let plotted = if cfg.return_level_cells.is_empty() {
            vec![(h / 4, w / 4), ((3 * h) / 4, (3 * w) / 4)]
        } else {
            cfg.return_level_cells.clone()
        };
        if let Some(bad) = plotted.iter().find(|(i, j)| *i >= h || *j >= w) {
            return Err(Error::Config(format!("return-level cell {bad:?} lies outside the {h}x{w} grid")));
        }
        let mut cells = lattice.clone();
        for p in &plotted {
            if !cells.contains(p) {
                cells.push(*p);
            }
        }
        Ok(Self { lattice, plotted, cells })
    }
}

struct CellResult {
    cell: (usize, usize),
    curve: Option<ReturnLevelCurve>,
    empirical: Vec<(String, EmpiricalLevels)>,
    rows: Vec<(String, Coverage)>,
}

/// `truth` is the cell's observed series; `models` holds each ensemble's per-member series.
fn cell_extremes(
    cell: (usize, usize),
    truth: &[f64],
    models: &[(&str, &[Vec<f64>])],
    time_index: &[i64],
    cfg: &EvalConfig,
) -> Result<CellResult> {
    let am = annual_maxima(truth, time_index)?;
    let failed = CellResult { cell, curve: None, empirical: Vec::new(), rows: Vec::new() };
    let fit = match fit_gev(&am.maxima) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("cell {cell:?}: {e}");
            return Ok(failed);
        }
    };
    let boot = BootstrapConfig {
        replicates: cfg.bootstrap,
        seed: seed::derive(cfg.seed, &[cell.0 as u64, cell.1 as u64]),
        ..Default::default()
    };
    let curve = match bootstrap_bands(&fit, am.maxima.len(), &default_period_grid(), &boot, cell) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("cell {cell:?}: {e}");
            return Ok(failed);
        }
    };
    let truth_emp = empirical_return_levels(&am.maxima)?;
    let mut rows = vec![(TRUTH.to_string(), coverage_verdict(&curve, &truth_emp)?)];
    let mut empirical = vec![(TRUTH.to_string(), truth_emp)];
    for (name, members) in models {
        let mut parts = Vec::new();
        for s in members.iter() {
            parts.push(empirical_return_levels(&annual_maxima(s, time_index)?.maxima)?);
        }
        let pooled = EmpiricalLevels::pooled(&parts);
        rows.push((name.to_string(), coverage_verdict(&curve, &pooled)?));
        empirical.push((name.to_string(), pooled));
    }
    Ok(CellResult { cell, curve: Some(curve), empirical, rows })
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let io = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn s(x: impl ToString) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Score every prediction ensemble against `truth` and write the report directory.
///
/// Each prediction is `[T * M, C, H, W]`, time-major, with every truth day repeated `M` times.
/// File predictions are streamed, so only the truth has to fit in memory.
pub fn build_report(preds: &[(String, Prediction)], truth: &FieldTensor, cfg: &EvalConfig, out: &Path) -> Result<EvalReport> {
    if cfg.bins == 0 || cfg.lattice == 0 {
        return Err(Error::Config("bins and lattice must be positive".into()));
    }
    let mut names: Vec<&str> = preds.iter().map(|p| p.0.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != preds.len() || names.contains(&TRUTH) || names.contains(&BASELINE) {
        return Err(Error::Config(format!("prediction names must be unique and not {TRUTH:?} or {BASELINE:?}")));
    }
    let ensembles = preds
        .iter()
        .map(|(n, p)| {
            let source = Source::from(p);
            Ok(Ensemble { name: n, source, members: align(n, &source.header()?, truth)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let [days, channels, h, w] = truth.shape();
    let years = annual_maxima(&vec![0.0; days], &truth.time_index)?.maxima.len();
    let cell_plan = if years >= MIN_MAXIMA && channels > PR { Some(CellPlan::new(cfg, h, w)?) } else { None };
    let cell_offsets: Vec<usize> =
        cell_plan.iter().flat_map(|cp| cp.cells.iter().map(|&(i, j)| i * w + j)).collect();

    // Histograms share one range per variable across the truth and every model.
    let mut ranges = Source::Memory(truth).range(channels)?;
    for e in &ensembles {
        for (r, x) in ranges.iter_mut().zip(e.source.range(channels)?) {
            *r = (r.0.min(x.0), r.1.max(x.1));
        }
    }
    let plan = Plan {
        truth,
        fair: cfg.fair_crps,
        score: true,
        ranges: Some(&ranges),
        bins: cfg.bins,
        hann: cfg.hann,
        cells: &cell_offsets,
    };
    let truth_scan = scan(Source::Memory(truth), 1, &Plan { score: false, ..plan })?;
    let mut scans = Vec::new();
    for e in &ensembles {
        log::info!("scoring {} ({} members)", e.name, e.members);
        scans.push(scan(e.source, e.members, &plan)?);
    }
    let baseline = nn_baseline(&coarsen(truth, cfg.factor)?, cfg.factor)?;
    let base_scan = scan(Source::Memory(&baseline), 1, &Plan { ranges: None, cells: &[], ..plan })?;
    drop(baseline);

    let tables = out.join("tables");
    let figures = out.join("figures");
    for d in [&tables, &figures] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        days,
        grid: (h, w),
        variables: truth.var_names.clone(),
        units: truth.units.clone(),
        models: ensembles.iter().map(|e| ModelInfo { name: e.name.to_string(), members: e.members }).collect(),
        scores: Vec::new(),
        spread: Vec::new(),
        extremes: None,
        tables: Vec::new(),
        figures: Vec::new(),
        config: cfg.clone(),
    };

    let mut score_rows = Vec::new();
    for c in 0..channels {
        let var = &truth.var_names[c];
        for (e, sc) in ensembles.iter().zip(&scans) {
            let spread = sc.spread[c];
            let row = ScoreRow {
                model: e.name.to_string(),
                variable: var.clone(),
                crps: Some(MeanStd::of(&sc.crps[c])),
                mae: MeanStd::of(&sc.mae[c]),
            };
            score_rows.push(vec![
                row.model.clone(),
                var.clone(),
                opt(row.crps.map(|m| m.mean)),
                opt(row.crps.map(|m| m.std)),
                s(row.mae.mean),
                s(row.mae.std),
                s(spread),
            ]);
            report.scores.push(row);
            report.spread.push(Spread { model: e.name.to_string(), variable: var.clone(), mean_pairwise_l1: spread });
        }
        let row = ScoreRow { model: BASELINE.into(), variable: var.clone(), crps: None, mae: MeanStd::of(&base_scan.mae[c]) };
        score_rows.push(vec![BASELINE.into(), var.clone(), String::new(), String::new(), s(row.mae.mean), s(row.mae.std), String::new()]);
        report.scores.push(row);
    }
    let header: Vec<String> =
        ["model", "variable", "crps_mean", "crps_std", "mae_mean", "mae_std", "spread"].iter().map(|x| s(x)).collect();
    write_csv(&tables.join("scores.csv"), &header, &score_rows)?;
    report.tables.push("tables/scores.csv".into());

    // Histograms and spectra share one column layout: truth, each model, then the baseline for spectra.
    let sources: Vec<(&str, &Scan)> =
        std::iter::once((TRUTH, &truth_scan)).chain(ensembles.iter().map(|e| e.name).zip(&scans)).collect();
    for c in 0..channels {
        let var = &truth.var_names[c];
        let units = &truth.units[c];
        let hists: Vec<&Histogram> = sources.iter().map(|x| &x.1.hists[c]).collect();
        let mut header = vec![s("bin_lo"), s("bin_hi")];
        header.extend(sources.iter().map(|x| s(x.0)));
        let rows: Vec<Vec<String>> = (0..cfg.bins)
            .map(|b| {
                let mut r = vec![s(hists[0].edges[b]), s(hists[0].edges[b + 1])];
                r.extend(hists.iter().map(|hh| s(hh.counts[b])));
                r
            })
            .collect();
        let name = format!("histogram_{var}");
        write_csv(&tables.join(format!("{name}.csv")), &header, &rows)?;
        report.tables.push(format!("tables/{name}.csv"));
        let series: Vec<(String, Vec<(f64, f64)>)> = sources
            .iter()
            .zip(&hists)
            .map(|((n, _), hh)| {
                let total = hh.total() as f64;
                let pts = (0..cfg.bins)
                    .filter(|&b| hh.counts[b] > 0)
                    .map(|b| (0.5 * (hh.edges[b] + hh.edges[b + 1]), (hh.counts[b] as f64 / total).log10()))
                    .collect();
                (s(n), pts)
            })
            .collect();
        plots::line_chart(
            &figures.join(format!("{name}.svg")),
            &format!("{var} pixel distribution"),
            (&format!("{var} ({units})"), "log10 relative frequency"),
            &series,
        )?;
        report.figures.push(format!("figures/{name}.svg"));

        if h == w {
            let mut psd_sources = sources.clone();
            psd_sources.push((BASELINE, &base_scan));
            let psds: Vec<&PsdResult> = psd_sources.iter().map(|x| &x.1.psds[c]).collect();
            let mut header = vec![s("wavenumber"), s("n_modes")];
            header.extend(psd_sources.iter().map(|x| s(x.0)));
            let rows: Vec<Vec<String>> = (0..psds[0].power.len())
                .map(|k| {
                    let mut r = vec![s(psds[0].wavenumbers[k]), s(psds[0].n_modes[k])];
                    r.extend(psds.iter().map(|p| s(p.power[k])));
                    r
                })
                .collect();
            let name = format!("psd_{var}");
            write_csv(&tables.join(format!("{name}.csv")), &header, &rows)?;
            report.tables.push(format!("tables/{name}.csv"));
            let series: Vec<(String, Vec<(f64, f64)>)> = psd_sources
                .iter()
                .zip(&psds)
                .map(|((n, _), p)| {
                    let pts = (1..p.power.len())
                        .filter(|&k| p.power[k] > 0.0)
                        .map(|k| (p.wavenumbers[k].log10(), p.power[k].log10()))
                        .collect();
                    (s(n), pts)
                })
                .collect();
            plots::line_chart(
                &figures.join(format!("{name}.svg")),
                &format!("{var} radially averaged power spectrum"),
                ("log10 wavenumber (cycles per domain)", "log10 power"),
                &series,
            )?;
            report.figures.push(format!("figures/{name}.svg"));
        }
    }

    match &cell_plan {
        Some(cp) => {
            let models: Vec<(&str, &Scan)> = ensembles.iter().map(|e| e.name).zip(&scans).collect();
            let ex = extremes_section(cp, &truth_scan, &models, truth, cfg, years, &tables, &figures, &mut report)?;
            report.extremes = Some(ex);
        }
        None if channels > PR => {
            log::warn!("{years} complete years; at least {MIN_MAXIMA} are needed for return levels, skipping extremes")
        }
        None => {}
    }

    let path = out.join(REPORT_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn extremes_section(
    cp: &CellPlan,
    truth_scan: &Scan,
    models: &[(&str, &Scan)],
    truth: &FieldTensor,
    cfg: &EvalConfig,
    years: usize,
    tables: &Path,
    figures: &Path,
    report: &mut EvalReport,
) -> Result<ExtremesSummary> {
    let c = PR;
    let results: Vec<CellResult> = cp
        .cells
        .par_iter()
        .enumerate()
        .map(|(k, &cell)| {
            let members: Vec<(&str, &[Vec<f64>])> = models.iter().map(|(n, sc)| (*n, sc.series[k].as_slice())).collect();
            cell_extremes(cell, &truth_scan.series[k][0], &members, &truth.time_index, cfg)
        })
        .collect::<Result<_>>()?;

    let sources: Vec<String> = std::iter::once(s(TRUTH)).chain(models.iter().map(|m| s(m.0))).collect();
    let mut pooled: Vec<Coverage> = vec![Coverage { inside: 0, evaluated: 0, excluded: 0 }; sources.len()];
    let mut cell_rows = Vec::new();
    let mut failed = Vec::new();
    let (mut cov_csv, mut curve_csv, mut emp_csv) = (Vec::new(), Vec::new(), Vec::new());
    for r in &results {
        if r.curve.is_none() {
            failed.push(r.cell);
            continue;
        }
        let on_lattice = cp.lattice.contains(&r.cell);
        let mut rows = Vec::new();
        for (k, (src, cov)) in r.rows.iter().enumerate() {
            if on_lattice {
                pooled[k] = pooled[k].merge(*cov);
            }
            cov_csv.push(vec![src.clone(), s(r.cell.0), s(r.cell.1), s(cov.inside), s(cov.evaluated), s(cov.excluded), s(cov.fraction())]);
            rows.push(CoverageRow::new(src, *cov));
        }
        cell_rows.push(CellCoverage { cell: r.cell, rows });
        if cp.plotted.contains(&r.cell) {
            let curve = r.curve.as_ref().expect("checked above");
            for j in 0..curve.periods.len() {
                curve_csv.push(vec![
                    s(r.cell.0),
                    s(r.cell.1),
                    s(curve.periods[j]),
                    s(curve.point[j]),
                    s(curve.lower95[j]),
                    s(curve.upper95[j]),
                ]);
            }
            for (src, e) in &r.empirical {
                for (t, l) in e.periods.iter().zip(&e.levels) {
                    emp_csv.push(vec![src.clone(), s(r.cell.0), s(r.cell.1), s(t), s(l)]);
                }
            }
            let name = format!("return_levels_{}_{}", r.cell.0, r.cell.1);
            plots::return_level_chart(
                &figures.join(format!("{name}.svg")),
                &format!("{} annual maxima at cell ({}, {})", truth.var_names[c], r.cell.0, r.cell.1),
                &truth.units[c],
                curve,
                &r.empirical,
            )?;
            report.figures.push(format!("figures/{name}.svg"));
        }
    }
    let hdr = |xs: &[&str]| xs.iter().map(|x| s(x)).collect::<Vec<_>>();
    write_csv(&tables.join("coverage.csv"), &hdr(&["source", "cell_i", "cell_j", "inside", "evaluated", "excluded", "fraction"]), &cov_csv)?;
    write_csv(&tables.join("return_levels.csv"), &hdr(&["cell_i", "cell_j", "period", "point", "lower95", "upper95"]), &curve_csv)?;
    write_csv(&tables.join("empirical_levels.csv"), &hdr(&["source", "cell_i", "cell_j", "period", "level"]), &emp_csv)?;
    for t in ["coverage", "return_levels", "empirical_levels"] {
        report.tables.push(format!("tables/{t}.csv"));
    }
    Ok(ExtremesSummary {
        variable: truth.var_names[c].clone(),
        years,
        bootstrap: cfg.bootstrap,
        periods: default_period_grid(),
        return_level_cells: cp.plotted.clone(),
        coverage: sources.iter().zip(&pooled).map(|(n, c)| CoverageRow::new(n, *c)).collect(),
        cells: cell_rows,
        failed_cells: failed,
    })
}
