//! Hierarchical measurement-error logistic regression: domain parameters,
//! the joint log posterior, and its analytic gradient on the unconstrained
//! scale.
//!
//! The regression models the true incidence pi of a (cell, week) on the
//! logit scale with varying intercepts for age, race, county, week, and an
//! age-by-sex interaction. Observed positivity combines pi with the test's
//! sensitivity and specificity, each informed by binomial calibration
//! trials.

use crate::data::{
    AgeGroup, CalibrationData, CellWeekCounts, County, Demographics, Race, TestRecord, WeekRange,
    aggregate_records,
};
use crate::error::{Error, Result};
use crate::sampler::LogDensityModel;

/// Half-normal hyperprior scale for the demographic intercept scales.
pub const DEMOG_SIGMA_SCALE: f64 = 2.5;
/// Half-normal hyperprior scale for the weekly effect scale, wider to allow
/// large variation across time.
pub const TIME_SIGMA_SCALE: f64 = 5.0;
/// Default prior standard deviation for beta1 and beta2.
pub const DEFAULT_BETA_PRIOR_SD: f64 = 2.5;

/// Probability clamp applied before taking logs.
pub const PROB_EPS: f64 = 1e-12;

const LN_2PI: f64 = 1.8378770664093453;
// ln(2/pi) / 2
const HALF_LN_2_OVER_PI: f64 = -0.22579135264472738;

pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// ln(1 + exp(x)) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 { x } else { x.exp().ln_1p() }
}

fn normal_lpdf(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * x * x / (sd * sd)
}

fn half_normal_lpdf(x: f64, scale: f64) -> f64 {
    HALF_LN_2_OVER_PI - scale.ln() - 0.5 * x * x / (scale * scale)
}

/// Binomial log likelihood without the combinatorial constant, i.e. the sum
/// of the underlying Bernoulli terms. Zero-trial inputs contribute exactly 0.
pub fn binomial_loglik(successes: f64, trials: f64, p: f64) -> f64 {
    if trials == 0.0 {
        return 0.0;
    }
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    successes * pc.ln() + (trials - successes) * (1.0 - pc).ln()
}

/// One posterior sample of every model parameter on the constrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDraw {
    pub beta1: f64,
    pub beta2: f64,
    pub alpha_age: [f64; 5],
    pub alpha_race: [f64; 3],
    pub alpha_county: [f64; 2],
    pub alpha_age_male: [f64; 5],
    /// One entry per week in `weeks`, in week order.
    pub alpha_time: Vec<f64>,
    pub weeks: WeekRange,
    pub sigma_age: f64,
    pub sigma_race: f64,
    pub sigma_county: f64,
    pub sigma_age_male: f64,
    pub sigma_time: f64,
    /// Specificity.
    pub gamma: f64,
    /// Sensitivity.
    pub delta: f64,
}

impl ParameterDraw {
    /// All regression coefficients at zero, unit scales, gamma = delta = 1/2.
    pub fn zeroed(weeks: WeekRange) -> ParameterDraw {
        ParameterDraw {
            beta1: 0.0,
            beta2: 0.0,
            alpha_age: [0.0; 5],
            alpha_race: [0.0; 3],
            alpha_county: [0.0; 2],
            alpha_age_male: [0.0; 5],
            alpha_time: vec![0.0; weeks.len()],
            weeks,
            sigma_age: 1.0,
            sigma_race: 1.0,
            sigma_county: 1.0,
            sigma_age_male: 1.0,
            sigma_time: 1.0,
            gamma: 0.5,
            delta: 0.5,
        }
    }

    /// Checks the type invariants: positive finite scales, gamma and delta
    /// in (0, 1] (1 is allowed so perfect-test truths can be constructed),
    /// and a time-effect vector matching the week range.
    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("sigma_age", self.sigma_age),
            ("sigma_race", self.sigma_race),
            ("sigma_county", self.sigma_county),
            ("sigma_age_male", self.sigma_age_male),
            ("sigma_time", self.sigma_time),
        ];
        for (name, s) in scales {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidDraw(format!("{name} must be positive, got {s}")));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("delta", self.delta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidDraw(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.alpha_time.len() != self.weeks.len() {
            return Err(Error::InvalidDraw(format!(
                "alpha_time has {} entries for {} weeks",
                self.alpha_time.len(),
                self.weeks.len()
            )));
        }
        let finite = self.flatten().into_iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidDraw("non-finite parameter value".into()));
        }
        Ok(())
    }

    /// Full parameter vector in canonical order (see `parameter_names`).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(24 + self.alpha_time.len());
        v.push(self.beta1);
        v.push(self.beta2);
        v.extend_from_slice(&self.alpha_age);
        v.extend_from_slice(&self.alpha_race);
        v.extend_from_slice(&self.alpha_county);
        v.extend_from_slice(&self.alpha_age_male);
        v.extend_from_slice(&self.alpha_time);
        v.extend_from_slice(&[
            self.sigma_age,
            self.sigma_race,
            self.sigma_county,
            self.sigma_age_male,
            self.sigma_time,
            self.gamma,
            self.delta,
        ]);
        v
    }

    /// Inverse of `flatten`.
    pub fn from_flattened(weeks: WeekRange, values: &[f64]) -> Result<ParameterDraw> {
        let expected = 24 + weeks.len();
        if values.len() != expected {
            return Err(Error::InvalidDraw(format!(
                "expected {expected} parameter values for weeks {weeks}, got {}",
                values.len()
            )));
        }
        let w = weeks.len();
        let draw = ParameterDraw {
            beta1: values[0],
            beta2: values[1],
            alpha_age: values[2..7].try_into().unwrap(),
            alpha_race: values[7..10].try_into().unwrap(),
            alpha_county: values[10..12].try_into().unwrap(),
            alpha_age_male: values[12..17].try_into().unwrap(),
            alpha_time: values[17..17 + w].to_vec(),
            weeks,
            sigma_age: values[17 + w],
            sigma_race: values[18 + w],
            sigma_county: values[19 + w],
            sigma_age_male: values[20 + w],
            sigma_time: values[21 + w],
            gamma: values[22 + w],
            delta: values[23 + w],
        };
        draw.validate()?;
        Ok(draw)
    }

    /// Names matching `flatten`, one per scalar parameter.
    pub fn parameter_names(weeks: &WeekRange) -> Vec<String> {
        let mut names = vec!["beta1".to_string(), "beta2".to_string()];
        for a in AgeGroup::LEVELS {
            names.push(format!("alpha_age[{}]", a.label()));
        }
        for r in Race::LEVELS {
            names.push(format!("alpha_race[{}]", r.label()));
        }
        for c in County::LEVELS {
            names.push(format!("alpha_county[{}]", c.label()));
        }
        for a in AgeGroup::LEVELS {
            names.push(format!("alpha_age_male[{}]", a.label()));
        }
        for w in weeks.iter() {
            names.push(format!("alpha_time[{w}]"));
        }
        for s in ["sigma_age", "sigma_race", "sigma_county", "sigma_age_male", "sigma_time"] {
            names.push(s.to_string());
        }
        names.push("gamma".to_string());
        names.push("delta".to_string());
        names
    }
}

/// Linear predictor on the logit scale for a cell and week, with the sex
/// effect coded +0.5 (male) / -0.5 (female) for both the main effect and the
/// age-by-sex interaction.
pub fn linear_predictor(draw: &ParameterDraw, cell: &Demographics, week: i32) -> Result<f64> {
    let off = draw.weeks.offset(week).ok_or(Error::UnknownWeek {
        week,
        first: draw.weeks.first(),
        last: draw.weeks.last(),
    })?;
    let m = cell.sex.male_coded();
    Ok(draw.beta1
        + draw.beta2 * m
        + draw.alpha_age[cell.age_group.index()]
        + draw.alpha_race[cell.race.index()]
        + draw.alpha_county[cell.county.index()]
        + draw.alpha_time[off]
        + draw.alpha_age_male[cell.age_group.index()] * m)
}

/// True underlying incidence pi for a cell and week.
pub fn true_incidence(draw: &ParameterDraw, cell: &Demographics, week: i32) -> Result<f64> {
    Ok(inv_logit(linear_predictor(draw, cell, week)?))
}

/// Probability of a positive test result given true incidence `pi`, test
/// specificity `gamma`, and sensitivity `delta`:
/// p = (1 - gamma) (1 - pi) + delta pi.
pub fn analytic_incidence(pi: f64, gamma: f64, delta: f64) -> f64 {
    (1.0 - gamma) * (1.0 - pi) + delta * pi
}

/// Model configuration: week coverage, the prior scale for the fixed-effect
/// coefficients, and optional fixing of the test parameters (used by
/// reduced models and perfect-test identities).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub weeks: WeekRange,
    pub beta_prior_sd: f64,
    pub fixed_gamma: Option<f64>,
    pub fixed_delta: Option<f64>,
}

impl ModelConfig {
    pub fn new(weeks: WeekRange) -> ModelConfig {
        ModelConfig {
            weeks,
            beta_prior_sd: DEFAULT_BETA_PRIOR_SD,
            fixed_gamma: None,
            fixed_delta: None,
        }
    }

    pub fn with_perfect_test(mut self) -> ModelConfig {
        self.fixed_gamma = Some(1.0);
        self.fixed_delta = Some(1.0);
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    week_off: usize,
    age: usize,
    race: usize,
    county: usize,
    male: f64,
    tests: f64,
    positives: f64,
}

// Unconstrained-vector layout offsets.
const IDX_BETA1: usize = 0;
const IDX_BETA2: usize = 1;
const IDX_AGE: usize = 2;
const IDX_RACE: usize = 7;
const IDX_COUNTY: usize = 10;
const IDX_AGE_MALE: usize = 12;
const IDX_TIME: usize = 17;

/// Joint posterior of the hierarchical measurement-error model over a fixed
/// dataset. Immutable and safe to evaluate concurrently.
#[derive(Debug, Clone)]
pub struct Posterior {
    config: ModelConfig,
    entries: Vec<Entry>,
    calibration: CalibrationData,
    // unconstrained layout
    sigma_base: usize,
    gamma_idx: Option<usize>,
    delta_idx: Option<usize>,
    dim: usize,
}

impl Posterior {
    pub fn new(
        records: &[TestRecord],
        calibration: &CalibrationData,
        config: ModelConfig,
    ) -> Result<Posterior> {
        let counts = aggregate_records(records, &config.weeks)?;
        Posterior::from_counts(&counts, calibration, config)
    }

    pub fn from_counts(
        counts: &[CellWeekCounts],
        calibration: &CalibrationData,
        config: ModelConfig,
    ) -> Result<Posterior> {
        for (name, fixed) in [("gamma", config.fixed_gamma), ("delta", config.fixed_delta)] {
            if let Some(v) = fixed {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "fixed {name} must lie in (0, 1], got {v}"
                    )));
                }
            }
        }
        let mut entries = Vec::with_capacity(counts.len());
        for c in counts {
            let week_off = config.weeks.offset(c.week).ok_or(Error::UnknownWeek {
                week: c.week,
                first: config.weeks.first(),
                last: config.weeks.last(),
            })?;
            if c.tests == 0 {
                continue;
            }
            entries.push(Entry {
                week_off,
                age: c.cell.age_group.index(),
                race: c.cell.race.index(),
                county: c.cell.county.index(),
                male: c.cell.sex.male_coded(),
                tests: c.tests as f64,
                positives: c.positives as f64,
            });
        }
        let n_weeks = config.weeks.len();
        let sigma_base = IDX_TIME + n_weeks;
        let mut next = sigma_base + 5;
        let gamma_idx = if config.fixed_gamma.is_none() {
            let i = next;
            next += 1;
            Some(i)
        } else {
            None
        };
        let delta_idx = if config.fixed_delta.is_none() {
            let i = next;
            next += 1;
            Some(i)
        } else {
            None
        };
        Ok(Posterior {
            config,
            entries,
            calibration: calibration.clone(),
            sigma_base,
            gamma_idx,
            delta_idx,
            dim: next,
        })
    }

    pub fn weeks(&self) -> WeekRange {
        self.config.weeks
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_cell_weeks(&self) -> usize {
        self.entries.len()
    }

    fn effective_gamma(&self, draw: &ParameterDraw) -> f64 {
        self.config.fixed_gamma.unwrap_or(draw.gamma)
    }

    fn effective_delta(&self, draw: &ParameterDraw) -> f64 {
        self.config.fixed_delta.unwrap_or(draw.delta)
    }

    /// Names of the sampled (free) parameters, matching the unconstrained
    /// vector layout on the constrained scale.
    pub fn free_parameter_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim);
        let all = ParameterDraw::parameter_names(&self.config.weeks);
        names.extend_from_slice(&all[..self.sigma_base + 5]);
        if self.gamma_idx.is_some() {
            names.push("gamma".to_string());
        }
        if self.delta_idx.is_some() {
            names.push("delta".to_string());
        }
        names
    }

    /// Data log likelihood: the aggregated binomial terms at the analytic
    /// incidence implied by the draw. Additive over cell-weeks.
    pub fn log_likelihood(&self, draw: &ParameterDraw) -> f64 {
        let gamma = self.effective_gamma(draw);
        let delta = self.effective_delta(draw);
        let mut ll = 0.0;
        for e in &self.entries {
            let eta = self.entry_eta(e, draw);
            let pi = inv_logit(eta);
            ll += binomial_loglik(e.positives, e.tests, analytic_incidence(pi, gamma, delta));
        }
        ll
    }

    fn entry_eta(&self, e: &Entry, draw: &ParameterDraw) -> f64 {
        draw.beta1
            + draw.beta2 * e.male
            + draw.alpha_age[e.age]
            + draw.alpha_race[e.race]
            + draw.alpha_county[e.county]
            + draw.alpha_time[e.week_off]
            + draw.alpha_age_male[e.age] * e.male
    }

    /// Calibration log likelihood for the free test parameters. Terms for a
    /// fixed parameter are constants and are dropped.
    pub fn calibration_log_likelihood(&self, draw: &ParameterDraw) -> f64 {
        let mut ll = 0.0;
        if self.config.fixed_gamma.is_none() {
            for &(y, n) in &self.calibration.specificity_trials {
                ll += binomial_loglik(y as f64, n as f64, draw.gamma);
            }
        }
        if self.config.fixed_delta.is_none() {
            for &(y, n) in &self.calibration.sensitivity_trials {
                ll += binomial_loglik(y as f64, n as f64, draw.delta);
            }
        }
        ll
    }

    /// Log prior on the constrained scale: hierarchical normal priors on the
    /// varying intercepts, half-normal hyperpriors on their scales,
    /// normal(0, beta_prior_sd) on the fixed effects, and uniform(0,1) on
    /// the free test parameters (contributing zero).
    pub fn log_prior(&self, draw: &ParameterDraw) -> f64 {
        let mut lp = 0.0;
        for a in draw.alpha_age {
            lp += normal_lpdf(a, draw.sigma_age);
        }
        for a in draw.alpha_race {
            lp += normal_lpdf(a, draw.sigma_race);
        }
        for a in draw.alpha_county {
            lp += normal_lpdf(a, draw.sigma_county);
        }
        for a in draw.alpha_age_male {
            lp += normal_lpdf(a, draw.sigma_age_male);
        }
        for &a in &draw.alpha_time {
            lp += normal_lpdf(a, draw.sigma_time);
        }
        lp += half_normal_lpdf(draw.sigma_age, DEMOG_SIGMA_SCALE);
        lp += half_normal_lpdf(draw.sigma_race, DEMOG_SIGMA_SCALE);
        lp += half_normal_lpdf(draw.sigma_county, DEMOG_SIGMA_SCALE);
        lp += half_normal_lpdf(draw.sigma_age_male, DEMOG_SIGMA_SCALE);
        lp += half_normal_lpdf(draw.sigma_time, TIME_SIGMA_SCALE);
        lp += normal_lpdf(draw.beta1, self.config.beta_prior_sd);
        lp += normal_lpdf(draw.beta2, self.config.beta_prior_sd);
        lp
    }

    /// Joint log posterior density on the constrained scale (no change of
    /// variables). Non-finite results at a valid interior draw indicate an
    /// implementation bug and are surfaced as errors.
    pub fn log_posterior(&self, draw: &ParameterDraw) -> Result<f64> {
        draw.validate()?;
        if draw.weeks != self.config.weeks {
            return Err(Error::InvalidDraw(format!(
                "draw covers weeks {}, model covers {}",
                draw.weeks, self.config.weeks
            )));
        }
        let lp = self.log_likelihood(draw) + self.calibration_log_likelihood(draw) + self.log_prior(draw);
        if !lp.is_finite() {
            return Err(Error::NonFiniteDensity(format!("log posterior = {lp}")));
        }
        Ok(lp)
    }

    /// Maps a draw to the unconstrained vector: identity for coefficients,
    /// log for scales, logit for free test parameters.
    pub fn to_unconstrained(&self, draw: &ParameterDraw) -> Result<Vec<f64>> {
        draw.validate()?;
        if draw.weeks != self.config.weeks {
            return Err(Error::InvalidDraw(format!(
                "draw covers weeks {}, model covers {}",
                draw.weeks, self.config.weeks
            )));
        }
        let mut v = Vec::with_capacity(self.dim);
        v.push(draw.beta1);
        v.push(draw.beta2);
        v.extend_from_slice(&draw.alpha_age);
        v.extend_from_slice(&draw.alpha_race);
        v.extend_from_slice(&draw.alpha_county);
        v.extend_from_slice(&draw.alpha_age_male);
        v.extend_from_slice(&draw.alpha_time);
        for s in [
            draw.sigma_age,
            draw.sigma_race,
            draw.sigma_county,
            draw.sigma_age_male,
            draw.sigma_time,
        ] {
            v.push(s.ln());
        }
        if self.gamma_idx.is_some() {
            v.push(logit(draw.gamma));
        }
        if self.delta_idx.is_some() {
            v.push(logit(draw.delta));
        }
        Ok(v)
    }

    /// Back-transforms an unconstrained vector into a constrained draw.
    pub fn from_unconstrained(&self, theta: &[f64]) -> ParameterDraw {
        assert_eq!(theta.len(), self.dim, "unconstrained vector length mismatch");
        let n_weeks = self.config.weeks.len();
        let sb = self.sigma_base;
        ParameterDraw {
            beta1: theta[IDX_BETA1],
            beta2: theta[IDX_BETA2],
            alpha_age: theta[IDX_AGE..IDX_AGE + 5].try_into().unwrap(),
            alpha_race: theta[IDX_RACE..IDX_RACE + 3].try_into().unwrap(),
            alpha_county: theta[IDX_COUNTY..IDX_COUNTY + 2].try_into().unwrap(),
            alpha_age_male: theta[IDX_AGE_MALE..IDX_AGE_MALE + 5].try_into().unwrap(),
            alpha_time: theta[IDX_TIME..IDX_TIME + n_weeks].to_vec(),
            weeks: self.config.weeks,
            sigma_age: theta[sb].exp(),
            sigma_race: theta[sb + 1].exp(),
            sigma_county: theta[sb + 2].exp(),
            sigma_age_male: theta[sb + 3].exp(),
            sigma_time: theta[sb + 4].exp(),
            gamma: self
                .gamma_idx
                .map(|i| inv_logit(theta[i]))
                .unwrap_or_else(|| self.config.fixed_gamma.unwrap()),
            delta: self
                .delta_idx
                .map(|i| inv_logit(theta[i]))
                .unwrap_or_else(|| self.config.fixed_delta.unwrap()),
        }
    }
}

impl LogDensityModel for Posterior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn parameter_names(&self) -> Vec<String> {
        self.free_parameter_names()
    }

    /// Unconstrained-scale log posterior (including the log-Jacobian of the
    /// log and logit transforms) and its exact analytic gradient.
    fn log_density_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.dim);
        debug_assert_eq!(grad.len(), self.dim);
        grad.fill(0.0);

        let sb = self.sigma_base;
        let sigmas: [f64; 5] = [
            theta[sb].exp(),
            theta[sb + 1].exp(),
            theta[sb + 2].exp(),
            theta[sb + 3].exp(),
            theta[sb + 4].exp(),
        ];
        if sigmas.iter().any(|s| !s.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let gamma = match self.gamma_idx {
            Some(i) => inv_logit(theta[i]),
            None => self.config.fixed_gamma.unwrap(),
        };
        let delta = match self.delta_idx {
            Some(i) => inv_logit(theta[i]),
            None => self.config.fixed_delta.unwrap(),
        };

        let mut lp = 0.0;
        let mut g_gamma = 0.0;
        let mut g_delta = 0.0;

        // Aggregated binomial likelihood and its gradient.
        let slope = delta + gamma - 1.0;
        for e in &self.entries {
            let eta = theta[IDX_BETA1]
                + theta[IDX_BETA2] * e.male
                + theta[IDX_AGE + e.age]
                + theta[IDX_RACE + e.race]
                + theta[IDX_COUNTY + e.county]
                + theta[IDX_TIME + e.week_off]
                + theta[IDX_AGE_MALE + e.age] * e.male;
            let pi = inv_logit(eta);
            let p = analytic_incidence(pi, gamma, delta);
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            lp += e.positives * pc.ln() + (e.tests - e.positives) * (1.0 - pc).ln();
            let g_p = e.positives / pc - (e.tests - e.positives) / (1.0 - pc);
            let d_eta = g_p * slope * pi * (1.0 - pi);
            grad[IDX_BETA1] += d_eta;
            grad[IDX_BETA2] += d_eta * e.male;
            grad[IDX_AGE + e.age] += d_eta;
            grad[IDX_RACE + e.race] += d_eta;
            grad[IDX_COUNTY + e.county] += d_eta;
            grad[IDX_TIME + e.week_off] += d_eta;
            grad[IDX_AGE_MALE + e.age] += d_eta * e.male;
            g_gamma += g_p * (pi - 1.0);
            g_delta += g_p * pi;
        }

        // Hierarchical priors on the varying intercepts, half-normal
        // hyperpriors on the scales, plus the log-Jacobian of sigma = exp(z).
        let blocks: [(usize, usize, f64); 5] = [
            (IDX_AGE, 5, DEMOG_SIGMA_SCALE),
            (IDX_RACE, 3, DEMOG_SIGMA_SCALE),
            (IDX_COUNTY, 2, DEMOG_SIGMA_SCALE),
            (IDX_AGE_MALE, 5, DEMOG_SIGMA_SCALE),
            (IDX_TIME, self.config.weeks.len(), TIME_SIGMA_SCALE),
        ];
        for (b, (start, count, hyper)) in blocks.into_iter().enumerate() {
            let z = theta[sb + b];
            let sigma = sigmas[b];
            let inv_var = 1.0 / (sigma * sigma);
            let mut sumsq = 0.0;
            for k in 0..count {
                let a = theta[start + k];
                lp += -0.5 * LN_2PI - z - 0.5 * a * a * inv_var;
                grad[start + k] += -a * inv_var;
                sumsq += a * a;
            }
            lp += HALF_LN_2_OVER_PI - hyper.ln() - 0.5 * sigma * sigma / (hyper * hyper);
            lp += z; // Jacobian of sigma = exp(z)
            grad[sb + b] =
                -(count as f64) + sumsq * inv_var - sigma * sigma / (hyper * hyper) + 1.0;
        }

        // Weakly informative priors on the fixed effects.
        let beta_var = self.config.beta_prior_sd * self.config.beta_prior_sd;
        lp += normal_lpdf(theta[IDX_BETA1], self.config.beta_prior_sd);
        lp += normal_lpdf(theta[IDX_BETA2], self.config.beta_prior_sd);
        grad[IDX_BETA1] += -theta[IDX_BETA1] / beta_var;
        grad[IDX_BETA2] += -theta[IDX_BETA2] / beta_var;

        // Calibration likelihoods, uniform(0,1) priors (zero term), and the
        // logit-transform Jacobians for the free test parameters.
        if let Some(i) = self.gamma_idx {
            let gc = gamma.clamp(PROB_EPS, 1.0 - PROB_EPS);
            for &(y, n) in &self.calibration.specificity_trials {
                if n == 0 {
                    continue;
                }
                lp += y as f64 * gc.ln() + (n - y) as f64 * (1.0 - gc).ln();
                g_gamma += y as f64 / gc - (n - y) as f64 / (1.0 - gc);
            }
            let u = theta[i];
            lp += -(softplus(u) + softplus(-u));
            grad[i] = gamma * (1.0 - gamma) * g_gamma + (1.0 - 2.0 * gamma);
        }
        if let Some(i) = self.delta_idx {
            let dc = delta.clamp(PROB_EPS, 1.0 - PROB_EPS);
            for &(y, n) in &self.calibration.sensitivity_trials {
                if n == 0 {
                    continue;
                }
                lp += y as f64 * dc.ln() + (n - y) as f64 * (1.0 - dc).ln();
                g_delta += y as f64 / dc - (n - y) as f64 / (1.0 - dc);
            }
            let u = theta[i];
            lp += -(softplus(u) + softplus(-u));
            grad[i] = delta * (1.0 - delta) * g_delta + (1.0 - 2.0 * delta);
        }

        if lp.is_nan() { f64::NEG_INFINITY } else { lp }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sex, WeekRange};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(sex: Sex) -> Demographics {
        Demographics::new(sex, AgeGroup::Age35To64, Race::White, County::Lake)
    }

    fn weeks3() -> WeekRange {
        WeekRange::new(18, 20).unwrap()
    }

    #[test]
    fn linear_predictor_zero_draw_is_zero() {
        let draw = ParameterDraw::zeroed(weeks3());
        for c in Demographics::all_cells() {
            assert_eq!(linear_predictor(&draw, &c, 19).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_predictor_sex_coding() {
        let mut draw = ParameterDraw::zeroed(weeks3());
        draw.beta1 = 1.0;
        draw.beta2 = 2.0;
        assert_eq!(linear_predictor(&draw, &cell(Sex::Male), 18).unwrap(), 2.0);
        assert_eq!(linear_predictor(&draw, &cell(Sex::Female), 18).unwrap(), 0.0);
    }

    #[test]
    fn linear_predictor_unknown_week_names_week() {
        let draw = ParameterDraw::zeroed(weeks3());
        let err = linear_predictor(&draw, &cell(Sex::Male), 42).unwrap_err();
        assert!(err.to_string().contains("42"), "{err}");
    }

    #[test]
    fn true_incidence_known_points() {
        let draw = ParameterDraw::zeroed(weeks3());
        assert_eq!(true_incidence(&draw, &cell(Sex::Female), 18).unwrap(), 0.5);

        let mut hot = ParameterDraw::zeroed(weeks3());
        hot.beta1 = 30.0;
        assert!(true_incidence(&hot, &cell(Sex::Female), 18).unwrap() > 1.0 - 1e-12);

        let mut one_pct = ParameterDraw::zeroed(weeks3());
        one_pct.beta1 = -4.59512;
        let pi = true_incidence(&one_pct, &cell(Sex::Female), 18).unwrap();
        assert!((pi - 0.01).abs() < 1e-7, "pi = {pi}");
    }

    #[test]
    fn analytic_incidence_identities() {
        assert_eq!(analytic_incidence(0.0, 1.0, 0.7), 0.0);
        assert_eq!(analytic_incidence(0.0, 0.99, 0.7), 1.0 - 0.99);
        let p = analytic_incidence(0.01, 0.99, 0.7);
        assert!((p - 0.0169).abs() < 1e-15, "p = {p}");
        for pi in [0.0, 0.2, 0.5, 0.99, 1.0] {
            assert_eq!(analytic_incidence(pi, 1.0, 1.0), pi);
        }
    }

    #[test]
    fn analytic_incidence_affine_monotone_in_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let gamma: f64 = rng.random();
            let delta: f64 = rng.random();
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let mid = 0.5 * (lo + hi);
            let f = |pi: f64| analytic_incidence(pi, gamma, delta);
            // affine: f(mid) is the average of the endpoints
            assert!((f(mid) - 0.5 * (f(lo) + f(hi))).abs() < 1e-12);
            if delta > 1.0 - gamma && hi > lo {
                assert!(f(hi) >= f(lo));
            }
        }
    }

    fn one_cell_records(week: i32, n: usize, positives: usize) -> Vec<TestRecord> {
        let c = cell(Sex::Female);
        (0..n)
            .map(|i| TestRecord { week, demographics: c, positive: i < positives })
            .collect()
    }

    #[test]
    fn likelihood_zero_of_ten_matches_hand_value() {
        let records = one_cell_records(18, 10, 0);
        let config = ModelConfig::new(weeks3()).with_perfect_test();
        let post = Posterior::new(&records, &CalibrationData::empty(), config).unwrap();
        let draw = ParameterDraw::zeroed(weeks3()); // eta = 0 so pi = 0.5
        let ll = post.log_likelihood(&draw);
        assert!((ll - 10.0 * 0.5f64.ln()).abs() < 1e-12, "ll = {ll}");
    }

    #[test]
    fn likelihood_doubles_with_doubled_counts() {
        let weeks = weeks3();
        let config = ModelConfig::new(weeks);
        let cal = CalibrationData::empty();
        let single = one_cell_records(19, 37, 5);
        let double = one_cell_records(19, 74, 10);
        let post1 = Posterior::new(&single, &cal, config.clone()).unwrap();
        let post2 = Posterior::new(&double, &cal, config).unwrap();
        let mut draw = ParameterDraw::zeroed(weeks);
        draw.beta1 = -1.3;
        draw.gamma = 0.97;
        draw.delta = 0.8;
        let l1 = post1.log_likelihood(&draw);
        let l2 = post2.log_likelihood(&draw);
        assert!((l2 - 2.0 * l1).abs() < 1e-12, "{l2} vs 2*{l1}");
    }

    #[test]
    fn empty_calibration_pair_contributes_zero() {
        let config = ModelConfig::new(weeks3());
        let with_empty = CalibrationData::new(vec![(0, 0)], vec![(0, 0)]).unwrap();
        let post0 =
            Posterior::new(&[], &CalibrationData::empty(), config.clone()).unwrap();
        let post1 = Posterior::new(&[], &with_empty, config).unwrap();
        let draw = ParameterDraw::zeroed(weeks3());
        assert_eq!(
            post0.calibration_log_likelihood(&draw),
            post1.calibration_log_likelihood(&draw)
        );
        assert_eq!(post1.calibration_log_likelihood(&draw), 0.0);
    }

    #[test]
    fn prior_only_value_matches_closed_form_sum() {
        // Empty data, empty calibration: the log posterior is the prior
        // alone. Recompute it from scratch with independent density
        // formulas.
        let weeks = weeks3();
        let post = Posterior::new(&[], &CalibrationData::empty(), ModelConfig::new(weeks)).unwrap();
        let draw = ParameterDraw::zeroed(weeks); // all alphas 0, sigmas 1, betas 0
        let got = post.log_posterior(&draw).unwrap();

        let ln_norm = |x: f64, sd: f64| {
            -(2.0 * std::f64::consts::PI).sqrt().ln() - sd.ln() - x * x / (2.0 * sd * sd)
        };
        let ln_half_norm = |x: f64, sd: f64| std::f64::consts::LN_2 + ln_norm(x, sd);
        let n_alphas = 5 + 3 + 2 + 5 + weeks.len();
        let expected = n_alphas as f64 * ln_norm(0.0, 1.0)
            + 4.0 * ln_half_norm(1.0, 2.5)
            + ln_half_norm(1.0, 5.0)
            + 2.0 * ln_norm(0.0, 2.5);
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn perfect_test_reduces_to_plain_logistic_likelihood() {
        // gamma = delta = 1 fixed, single cell-week: the likelihood must be
        // the standard binomial logistic form evaluated in closed form.
        let weeks = weeks3();
        let records = one_cell_records(18, 50, 7);
        let config = ModelConfig::new(weeks).with_perfect_test();
        let post = Posterior::new(&records, &CalibrationData::empty(), config).unwrap();
        let mut draw = ParameterDraw::zeroed(weeks);
        for b in [-2.0, -0.5, 0.3, 1.7] {
            draw.beta1 = b;
            let pi = 1.0 / (1.0 + (-b as f64).exp());
            let closed = 7.0 * pi.ln() + 43.0 * (1.0 - pi).ln();
            let got = post.log_likelihood(&draw);
            assert!((got - closed).abs() < 1e-10, "b={b}: {got} vs {closed}");
        }
    }

    #[test]
    fn log_posterior_invariant_under_record_relabeling() {
        let weeks = weeks3();
        let mut records = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let idx = rng.random_range(0..crate::data::NUM_CELLS);
            records.push(TestRecord {
                week: rng.random_range(18..=20),
                demographics: Demographics::from_cell_index(idx).unwrap(),
                positive: rng.random::<f64>() < 0.05,
            });
        }
        let cal = CalibrationData::default_priors();
        let config = ModelConfig::new(weeks);
        let mut draw = ParameterDraw::zeroed(weeks);
        draw.beta1 = -3.0;
        draw.gamma = 0.99;
        draw.delta = 0.7;
        let a = Posterior::new(&records, &cal, config.clone())
            .unwrap()
            .log_posterior(&draw)
            .unwrap();
        // reverse and interleave: same multiset of records
        records.reverse();
        let b = Posterior::new(&records, &cal, config)
            .unwrap()
            .log_posterior(&draw)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unconstrained_density_equals_constrained_plus_jacobian() {
        let weeks = weeks3();
        let records = one_cell_records(19, 40, 3);
        let cal = CalibrationData::default_priors();
        let post = Posterior::new(&records, &cal, ModelConfig::new(weeks)).unwrap();
        let mut draw = ParameterDraw::zeroed(weeks);
        draw.beta1 = -2.0;
        draw.sigma_age = 0.7;
        draw.sigma_time = 2.0;
        draw.gamma = 0.95;
        draw.delta = 0.65;
        let theta = post.to_unconstrained(&draw).unwrap();
        let mut grad = vec![0.0; post.dim()];
        let unconstrained = post.log_density_gradient(&theta, &mut grad);
        let jacobian = draw.sigma_age.ln()
            + draw.sigma_race.ln()
            + draw.sigma_county.ln()
            + draw.sigma_age_male.ln()
            + draw.sigma_time.ln()
            + (draw.gamma * (1.0 - draw.gamma)).ln()
            + (draw.delta * (1.0 - draw.delta)).ln();
        let constrained = post.log_posterior(&draw).unwrap();
        assert!(
            (unconstrained - (constrained + jacobian)).abs() < 1e-9,
            "{unconstrained} vs {constrained} + {jacobian}"
        );
    }

    fn finite_difference(post: &Posterior, theta: &[f64], h: f64) -> Vec<f64> {
        let mut scratch = vec![0.0; theta.len()];
        let mut fd = vec![0.0; theta.len()];
        let mut t = theta.to_vec();
        for i in 0..theta.len() {
            t[i] = theta[i] + h;
            let up = post.log_density_gradient(&t, &mut scratch);
            t[i] = theta[i] - h;
            let down = post.log_density_gradient(&t, &mut scratch);
            t[i] = theta[i];
            fd[i] = (up - down) / (2.0 * h);
        }
        fd
    }

    fn random_records(rng: &mut ChaCha8Rng, weeks: &WeekRange, n: usize) -> Vec<TestRecord> {
        (0..n)
            .map(|_| TestRecord {
                week: rng.random_range(weeks.first()..=weeks.last()),
                demographics: Demographics::from_cell_index(
                    rng.random_range(0..crate::data::NUM_CELLS),
                )
                .unwrap(),
                positive: rng.random::<f64>() < 0.1,
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let weeks = WeekRange::new(18, 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let records = random_records(&mut rng, &weeks, 600);
        let cal = CalibrationData::default_priors();
        let post = Posterior::new(&records, &cal, ModelConfig::new(weeks)).unwrap();
        let mut grad = vec![0.0; post.dim()];
        for _ in 0..10 {
            let theta: Vec<f64> =
                (0..post.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            post.log_density_gradient(&theta, &mut grad);
            let fd = finite_difference(&post, &theta, 1e-5);
            for i in 0..post.dim() {
                let scale = 1.0f64.max(grad[i].abs()).max(fd[i].abs());
                assert!(
                    (grad[i] - fd[i]).abs() / scale < 1e-5,
                    "component {i}: analytic {} vs fd {}",
                    grad[i],
                    fd[i]
                );
            }
        }
    }

    #[test]
    fn gradient_zero_at_mode_of_symmetric_prior() {
        // With no data and no calibration, the density is symmetric in each
        // alpha and beta around zero; the gradient there must vanish.
        let weeks = weeks3();
        let post =
            Posterior::new(&[], &CalibrationData::empty(), ModelConfig::new(weeks)).unwrap();
        let mut draw = ParameterDraw::zeroed(weeks);
        draw.gamma = 0.5;
        draw.delta = 0.5;
        let theta = post.to_unconstrained(&draw).unwrap();
        let mut grad = vec![0.0; post.dim()];
        post.log_density_gradient(&theta, &mut grad);
        // beta and alpha coordinates: symmetric mode
        for (i, g) in grad.iter().enumerate().take(IDX_TIME + weeks.len()) {
            assert!(g.abs() < 1e-12, "component {i} = {g}");
        }
        // gamma/delta at 0.5 with uniform prior: only the Jacobian term,
        // whose derivative 1 - 2*0.5 = 0.
        assert!(grad[post.dim() - 1].abs() < 1e-12);
        assert!(grad[post.dim() - 2].abs() < 1e-12);
    }

    #[test]
    fn alpha_time_perturbation_is_structurally_sparse() {
        // Changing alpha_time[w] must only move likelihood terms of week w
        // plus its own prior: the log-posterior difference computed on the
        // full model equals the difference computed on a week-w-only model
        // plus the prior shift.
        let weeks = weeks3();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records = random_records(&mut rng, &weeks, 300);
        let cal = CalibrationData::default_priors();
        let post = Posterior::new(&records, &cal, ModelConfig::new(weeks)).unwrap();
        let week_w = 19;
        let off = weeks.offset(week_w).unwrap();

        let mut draw = ParameterDraw::zeroed(weeks);
        draw.beta1 = -2.5;
        draw.gamma = 0.99;
        draw.delta = 0.7;
        let base = post.log_posterior(&draw).unwrap();
        let base_week_ll = week_only_loglik(&post, &records, &draw, week_w);

        let mut moved = draw.clone();
        moved.alpha_time[off] += 0.37;
        let shifted = post.log_posterior(&moved).unwrap();
        let shifted_week_ll = week_only_loglik(&post, &records, &moved, week_w);

        let prior_shift = normal_lpdf(moved.alpha_time[off], moved.sigma_time)
            - normal_lpdf(draw.alpha_time[off], draw.sigma_time);
        let expected = (shifted_week_ll - base_week_ll) + prior_shift;
        assert!(
            ((shifted - base) - expected).abs() < 1e-9,
            "{} vs {}",
            shifted - base,
            expected
        );
    }

    fn week_only_loglik(
        post: &Posterior,
        records: &[TestRecord],
        draw: &ParameterDraw,
        week: i32,
    ) -> f64 {
        let subset: Vec<TestRecord> =
            records.iter().copied().filter(|r| r.week == week).collect();
        let sub = Posterior::new(&subset, &CalibrationData::empty(), post.config.clone()).unwrap();
        sub.log_likelihood(draw)
    }
}
