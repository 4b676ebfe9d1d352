//! Model checking and surveillance-series comparison: posterior predictive
//! checks, prior-sensitivity sweeps, peak detection, and lead-lag analysis.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::data::{CalibrationData, CellWeekCounts, PoststratTable, TestRecord, WeekRange};
use crate::error::{Error, Result};
use crate::model::{analytic_incidence, ModelConfig, Posterior};
use crate::poststrat::{poststratify, PrevalenceSeries};
use crate::sampler::{sample, PosteriorDraws, SamplerConfig};
use crate::series::MetricSeries;
use crate::stats;

/// Per-week posterior predictive comparison.
#[derive(Debug, Clone)]
pub struct PpcWeek {
    pub week: i32,
    pub tests: u64,
    /// Observed weekly positivity; `None` when no tests were taken.
    pub observed: Option<f64>,
    pub replicated_mean: Option<f64>,
    pub replicated_q025: Option<f64>,
    pub replicated_q975: Option<f64>,
    /// Whether the observed rate falls in the replicated 95% interval.
    pub covered: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct PpcReport {
    pub weeks: WeekRange,
    pub rows: Vec<PpcWeek>,
}

impl PpcReport {
    /// Fraction of observed weeks whose rate falls inside the replicated
    /// interval.
    pub fn coverage(&self) -> f64 {
        let flags: Vec<bool> = self.rows.iter().filter_map(|r| r.covered).collect();
        if flags.is_empty() {
            return f64::NAN;
        }
        flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64
    }
}

/// Regenerates test results from every posterior draw at the observed
/// sample sizes and compares weekly replicated positivity with the data.
pub fn posterior_predictive_check(
    draws: &PosteriorDraws,
    records: &[TestRecord],
    seed: u64,
) -> Result<PpcReport> {
    if draws.draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let weeks = draws.weeks;
    let counts = crate::data::aggregate_records(records, &weeks)?;

    let mut weekly_tests = vec![0u64; weeks.len()];
    let mut weekly_positives = vec![0u64; weeks.len()];
    for c in &counts {
        let off = weeks.offset(c.week).unwrap();
        weekly_tests[off] += c.tests;
        weekly_positives[off] += c.positives;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_draws = draws.draws.len();
    // replicated weekly positivity per draw
    let mut replicated: Vec<Vec<f64>> = vec![Vec::with_capacity(n_draws); weeks.len()];
    for draw in &draws.draws {
        let mut rep_pos = vec![0u64; weeks.len()];
        for c in &counts {
            let off = weeks.offset(c.week).unwrap();
            let pi = crate::model::true_incidence(draw, &c.cell, c.week)?;
            let p = analytic_incidence(pi, draw.gamma, draw.delta).clamp(0.0, 1.0);
            rep_pos[off] += Binomial::new(c.tests, p).expect("valid binomial").sample(&mut rng);
        }
        for (off, &n) in weekly_tests.iter().enumerate() {
            if n > 0 {
                replicated[off].push(rep_pos[off] as f64 / n as f64);
            }
        }
    }

    let rows = weeks
        .iter()
        .enumerate()
        .map(|(off, week)| {
            let tests = weekly_tests[off];
            if tests == 0 {
                return PpcWeek {
                    week,
                    tests,
                    observed: None,
                    replicated_mean: None,
                    replicated_q025: None,
                    replicated_q975: None,
                    covered: None,
                };
            }
            let observed = weekly_positives[off] as f64 / tests as f64;
            let mut reps = replicated[off].clone();
            reps.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = stats::quantile_sorted(&reps, 0.025);
            let hi = stats::quantile_sorted(&reps, 0.975);
            PpcWeek {
                week,
                tests,
                observed: Some(observed),
                replicated_mean: Some(stats::mean(&reps)),
                replicated_q025: Some(lo),
                replicated_q975: Some(hi),
                covered: Some(observed >= lo && observed <= hi),
            }
        })
        .collect();

    Ok(PpcReport { weeks, rows })
}

pub const PPC_CSV_HEADER: &str = "week,tests,observed,replicated_mean,replicated_q025,replicated_q975,covered";

pub fn write_ppc_csv(path: &Path, report: &PpcReport) -> Result<()> {
    let mut out = String::from(PPC_CSV_HEADER);
    out.push('\n');
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.week,
            r.tests,
            fmt(r.observed),
            fmt(r.replicated_mean),
            fmt(r.replicated_q025),
            fmt(r.replicated_q975),
            r.covered.map(|c| if c { "1" } else { "0" }).unwrap_or(""),
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// One refit of a prior-sensitivity sweep.
#[derive(Debug)]
pub struct SweepFit {
    pub sensitivity_center: f64,
    pub draws: PosteriorDraws,
    pub series: Vec<PrevalenceSeries>,
}

/// Refits the model once per sweep value, replacing the sensitivity
/// calibration data with a single (round(100 s), 100) pair, and
/// poststratifies each fit to the supplied tables.
pub fn sensitivity_sweep(
    counts: &[CellWeekCounts],
    calibration: &CalibrationData,
    tables: &[&PoststratTable],
    model_config: &ModelConfig,
    sampler_config: &SamplerConfig,
    sweep_values: &[f64],
) -> Result<Vec<SweepFit>> {
    for &s in sweep_values {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sweep sensitivity {s} outside (0, 1]"
            )));
        }
    }
    let mut out = Vec::with_capacity(sweep_values.len());
    for &s in sweep_values {
        let cal = calibration.with_sensitivity_center(s);
        let posterior = Posterior::from_counts(counts, &cal, model_config.clone())?;
        let draws = sample(&posterior, sampler_config, None)?;
        let series = tables
            .iter()
            .map(|t| poststratify(&draws, t, model_config.weeks))
            .collect::<Result<Vec<_>>>()?;
        out.push(SweepFit { sensitivity_center: s, draws, series });
    }
    Ok(out)
}

/// Peak week of a series: argmax of a centered moving average of width
/// `window` (odd), truncated at the boundaries and skipping missing values.
/// Ties break toward the earliest week.
pub fn peak_week(series: &MetricSeries, window: usize) -> Result<i32> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    let observed = series.n_observed();
    if observed == 0 {
        return Err(Error::EmptySeries { name: series.name.clone() });
    }
    if observed < window {
        return Err(Error::TooFew { needed: window, got: observed, what: "non-missing weeks" });
    }
    let half = (window / 2) as i64;
    let n = series.weeks.len() as i64;
    let mut best: Option<(f64, i32)> = None;
    for center in 0..n {
        let lo = (center - half).max(0) as usize;
        let hi = ((center + half).min(n - 1)) as usize;
        let vals: Vec<f64> = (lo..=hi).filter_map(|i| series.values[i]).collect();
        if vals.is_empty() {
            continue;
        }
        let smoothed = stats::mean(&vals);
        let week = series.weeks.week_at(center as usize);
        match best {
            Some((b, _)) if smoothed <= b => {}
            _ => best = Some((smoothed, week)),
        }
    }
    Ok(best.expect("at least one smoothed value").1)
}

/// Cross-correlation profile between two weekly series.
#[derive(Debug, Clone)]
pub struct LeadLag {
    /// Lag (weeks) at which `a` best predicts `b`; positive means `a`
    /// leads `b`.
    pub best_lag: i32,
    pub best_correlation: f64,
    /// (lag, Pearson correlation of first differences) for every candidate.
    pub profile: Vec<(i32, f64)>,
}

const MIN_OVERLAP: usize = 8;

/// Pearson correlation of first-differenced series at every integer lag in
/// [-max_lag, max_lag]. The best lag maximizes the correlation, with ties
/// broken toward zero.
pub fn lead_lag(a: &MetricSeries, b: &MetricSeries, max_lag: usize) -> Result<LeadLag> {
    let da = differences_by_week(a);
    let db = differences_by_week(b);
    let max_lag = max_lag as i32;

    let mut profile = Vec::with_capacity((2 * max_lag + 1) as usize);
    for lag in -max_lag..=max_lag {
        // pair da at week w with db at week w + lag
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &(week, x) in &da {
            if let Some(&(_, y)) = db.iter().find(|&&(w, _)| w == week + lag) {
                xs.push(x);
                ys.push(y);
            }
        }
        if xs.len() < MIN_OVERLAP {
            return Err(Error::InsufficientOverlap {
                a: a.name.clone(),
                b: b.name.clone(),
                lag,
                got: xs.len(),
                needed: MIN_OVERLAP,
            });
        }
        profile.push((lag, stats::pearson(&xs, &ys)));
    }

    // ties toward zero: scan lags by increasing |lag|
    let mut order: Vec<usize> = (0..profile.len()).collect();
    order.sort_by_key(|&i| (profile[i].0.abs(), profile[i].0));
    let mut best: Option<(i32, f64)> = None;
    for i in order {
        let (lag, r) = profile[i];
        if !r.is_finite() {
            continue;
        }
        match best {
            Some((_, br)) if r <= br => {}
            _ => best = Some((lag, r)),
        }
    }
    let (best_lag, best_correlation) = best.ok_or(Error::EmptySeries {
        name: format!("{} vs {}", a.name, b.name),
    })?;
    Ok(LeadLag { best_lag, best_correlation, profile })
}

fn differences_by_week(s: &MetricSeries) -> Vec<(i32, f64)> {
    s.first_differences()
        .into_iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|v| (s.weeks.week_at(i + 1), v)))
        .collect()
}
