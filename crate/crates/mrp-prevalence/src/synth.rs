//! Synthetic data generation with known ground truth, plus brute-force
//! quadrature oracles for validating the sampler on reduced models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::data::{
    CalibrationData, Demographics, PoststratTable, TestRecord, WeekRange, NUM_CELLS,
};
use crate::error::{Error, Result};
use crate::model::{analytic_incidence, inv_logit, true_incidence, ParameterDraw};
use crate::sampler::LogDensityModel;
use crate::series::MetricSeries;

/// Weekly test allocation: how many tests each cell receives each week.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub weeks: WeekRange,
    /// cell_tests[week offset][cell index]
    pub cell_tests: Vec<[u64; NUM_CELLS]>,
}

impl Design {
    pub fn new(weeks: WeekRange, cell_tests: Vec<[u64; NUM_CELLS]>) -> Result<Design> {
        if cell_tests.len() != weeks.len() {
            return Err(Error::Other(format!(
                "design has {} weekly allocations for {} weeks",
                cell_tests.len(),
                weeks.len()
            )));
        }
        Ok(Design { weeks, cell_tests })
    }

    pub fn total_tests(&self) -> u64 {
        self.cell_tests.iter().flat_map(|w| w.iter()).sum()
    }

    /// Spreads weekly totals over cells proportionally to `cell_probs`
    /// using largest-remainder rounding, so the allocation is deterministic
    /// and sums exactly to each weekly total.
    pub fn from_weekly_totals(
        weeks: WeekRange,
        totals: &[u64],
        cell_probs: &[f64; NUM_CELLS],
    ) -> Result<Design> {
        if totals.len() != weeks.len() {
            return Err(Error::Other(format!(
                "{} weekly totals for {} weeks",
                totals.len(),
                weeks.len()
            )));
        }
        let cell_tests = totals.iter().map(|&t| largest_remainder(t, cell_probs)).collect();
        Design::new(weeks, cell_tests)
    }
}

/// Apportions `total` across cells proportional to `weights` (largest
/// remainder method), exactly preserving the total.
pub fn largest_remainder(total: u64, weights: &[f64; NUM_CELLS]) -> [u64; NUM_CELLS] {
    let weight_sum: f64 = weights.iter().sum();
    let mut out = [0u64; NUM_CELLS];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(NUM_CELLS);
    let mut assigned = 0u64;
    for i in 0..NUM_CELLS {
        let exact = total as f64 * weights[i] / weight_sum;
        let floor = exact.floor() as u64;
        out[i] = floor;
        assigned += floor;
        remainders.push((i, exact - floor as f64));
    }
    // ties broken by cell index so rounding is deterministic
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut left = total - assigned;
    for (i, _) in remainders {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Draws test records from the model: positives per cell-week are binomial
/// at the analytic incidence implied by `truth`. Deterministic given `seed`.
pub fn generate(truth: &ParameterDraw, design: &Design, seed: u64) -> Result<Vec<TestRecord>> {
    truth.validate()?;
    if truth.weeks != design.weeks {
        return Err(Error::Other(format!(
            "truth covers weeks {}, design covers {}",
            truth.weeks, design.weeks
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(design.total_tests() as usize);
    for (off, week) in design.weeks.iter().enumerate() {
        for cell in Demographics::all_cells() {
            let n = design.cell_tests[off][cell.cell_index()];
            if n == 0 {
                continue;
            }
            let pi = true_incidence(truth, &cell, week)?;
            let p = analytic_incidence(pi, truth.gamma, truth.delta).clamp(0.0, 1.0);
            let positives = Binomial::new(n, p).expect("valid binomial").sample(&mut rng);
            for k in 0..n {
                records.push(TestRecord { week, demographics: cell, positive: k < positives });
            }
        }
    }
    Ok(records)
}

/// Posterior over a dense grid: normalized weights for computing arbitrary
/// expectations of low-dimensional reduced models.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl GridPosterior {
    /// Tabulates `log_density` over a regular grid with `points_per_dim`
    /// nodes per dimension (at most two dimensions).
    pub fn new(
        log_density: &dyn Fn(&[f64]) -> f64,
        bounds: &[(f64, f64)],
        points_per_dim: usize,
    ) -> Result<GridPosterior> {
        assert!(
            !bounds.is_empty() && bounds.len() <= 2,
            "grid oracle supports one or two dimensions"
        );
        assert!(points_per_dim >= 2);
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .map(|&(lo, hi)| {
                (0..points_per_dim)
                    .map(|i| lo + (hi - lo) * i as f64 / (points_per_dim - 1) as f64)
                    .collect()
            })
            .collect();
        let mut points = Vec::new();
        if bounds.len() == 1 {
            for &x in &axes[0] {
                points.push(vec![x]);
            }
        } else {
            for &x in &axes[0] {
                for &y in &axes[1] {
                    points.push(vec![x, y]);
                }
            }
        }
        let logs: Vec<f64> = points.iter().map(|p| log_density(p)).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateGrid);
        }
        let mut weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok(GridPosterior { points, weights })
    }

    pub fn expectation(&self, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    pub fn mean_sd_of(&self, f: &dyn Fn(&[f64]) -> f64) -> (f64, f64) {
        let mean = self.expectation(f);
        let var = self.expectation(&|p: &[f64]| (f(p) - mean).powi(2));
        (mean, var.max(0.0).sqrt())
    }

    /// Coordinate-wise posterior means and standard deviations.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let dim = self.points[0].len();
        let mut means = Vec::with_capacity(dim);
        let mut sds = Vec::with_capacity(dim);
        for d in 0..dim {
            let (m, s) = self.mean_sd_of(&|p: &[f64]| p[d]);
            means.push(m);
            sds.push(s);
        }
        (means, sds)
    }
}

/// Posterior moments of a reduced model (at most two free parameters) by
/// dense grid quadrature.
pub fn grid_oracle(
    log_density: &dyn Fn(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    points_per_dim: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(GridPosterior::new(log_density, bounds, points_per_dim)?.moments())
}

/// Widens an interval around `center` until the log density at both edges
/// has dropped at least 30 nats below the center value.
pub fn expand_bounds(log_density: &dyn Fn(f64) -> f64, center: f64, initial_halfwidth: f64) -> (f64, f64) {
    let mut half = initial_halfwidth.max(1e-6);
    let at_center = log_density(center);
    for _ in 0..60 {
        let lo = log_density(center - half);
        let hi = log_density(center + half);
        if (!lo.is_finite() || at_center - lo > 30.0) && (!hi.is_finite() || at_center - hi > 30.0)
        {
            return (center - half, center + half);
        }
        half *= 2.0;
    }
    (center - half, center + half)
}

/// Reduced targets with one free parameter, used to validate the sampler
/// against quadrature and closed forms.
pub mod reduced {
    use super::*;

    /// Binomial logistic model with a single intercept and a wide normal
    /// prior; the test is treated as perfect.
    pub struct InterceptOnlyLogistic {
        pub positives: u64,
        pub tests: u64,
        pub prior_sd: f64,
    }

    impl InterceptOnlyLogistic {
        pub fn log_density(&self, beta: f64) -> f64 {
            let pi = inv_logit(beta);
            crate::model::binomial_loglik(self.positives as f64, self.tests as f64, pi)
                - 0.5 * beta * beta / (self.prior_sd * self.prior_sd)
        }
    }

    impl LogDensityModel for InterceptOnlyLogistic {
        fn dim(&self) -> usize {
            1
        }
        fn parameter_names(&self) -> Vec<String> {
            vec!["beta1".into()]
        }
        fn log_density_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
            let beta = q[0];
            let pi = inv_logit(beta);
            // d/dbeta [y ln pi + (n-y) ln(1-pi)] = y - n*pi
            grad[0] = self.positives as f64 - self.tests as f64 * pi
                - beta / (self.prior_sd * self.prior_sd);
            self.log_density(beta)
        }
    }

    /// Calibration-only model for a test probability (sensitivity or
    /// specificity) with a uniform prior; sampled on the logit scale. The
    /// posterior on the probability scale is the conjugate
    /// Beta(1 + sum y, 1 + sum (n - y)).
    pub struct ProbabilityFromTrials {
        pub trials: Vec<(u64, u64)>,
    }

    impl ProbabilityFromTrials {
        /// Log density on the probability scale (for quadrature).
        pub fn log_density_prob(&self, theta: f64) -> f64 {
            if !(0.0..=1.0).contains(&theta) {
                return f64::NEG_INFINITY;
            }
            self.trials
                .iter()
                .map(|&(y, n)| crate::model::binomial_loglik(y as f64, n as f64, theta))
                .sum()
        }

        pub fn conjugate_beta(&self) -> (f64, f64) {
            let y: u64 = self.trials.iter().map(|t| t.0).sum();
            let n: u64 = self.trials.iter().map(|t| t.1).sum();
            (1.0 + y as f64, 1.0 + (n - y) as f64)
        }
    }

    impl LogDensityModel for ProbabilityFromTrials {
        fn dim(&self) -> usize {
            1
        }
        fn parameter_names(&self) -> Vec<String> {
            vec!["theta".into()]
        }
        fn log_density_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
            let u = q[0];
            let theta = inv_logit(u);
            let tc = theta.clamp(crate::model::PROB_EPS, 1.0 - crate::model::PROB_EPS);
            let mut lp = 0.0;
            let mut g = 0.0;
            for &(y, n) in &self.trials {
                if n == 0 {
                    continue;
                }
                lp += y as f64 * tc.ln() + (n - y) as f64 * (1.0 - tc).ln();
                g += y as f64 / tc - (n - y) as f64 / (1.0 - tc);
            }
            // logit-transform Jacobian
            lp += tc.ln() + (1.0 - tc).ln();
            grad[0] = theta * (1.0 - theta) * g + 1.0 - 2.0 * theta;
            lp
        }
    }

    /// Normal observations with known sd and a normal prior on the mean:
    /// closed-form conjugate posterior.
    pub struct ConjugateNormal {
        pub prior_mean: f64,
        pub prior_sd: f64,
        pub obs_sd: f64,
        pub observations: Vec<f64>,
    }

    impl ConjugateNormal {
        pub fn log_density(&self, mu: f64) -> f64 {
            let mut lp = -0.5 * (mu - self.prior_mean).powi(2) / (self.prior_sd * self.prior_sd);
            for y in &self.observations {
                lp -= 0.5 * (y - mu).powi(2) / (self.obs_sd * self.obs_sd);
            }
            lp
        }

        /// Closed-form posterior mean and sd.
        pub fn posterior(&self) -> (f64, f64) {
            let prec0 = 1.0 / (self.prior_sd * self.prior_sd);
            let prec_obs = self.observations.len() as f64 / (self.obs_sd * self.obs_sd);
            let var = 1.0 / (prec0 + prec_obs);
            let sum: f64 = self.observations.iter().sum();
            let mean = var * (self.prior_mean * prec0 + sum / (self.obs_sd * self.obs_sd));
            (mean, var.sqrt())
        }
    }

    impl LogDensityModel for ConjugateNormal {
        fn dim(&self) -> usize {
            1
        }
        fn parameter_names(&self) -> Vec<String> {
            vec!["mu".into()]
        }
        fn log_density_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
            let mu = q[0];
            let mut g = -(mu - self.prior_mean) / (self.prior_sd * self.prior_sd);
            for y in &self.observations {
                g += (y - mu) / (self.obs_sd * self.obs_sd);
            }
            grad[0] = g;
            self.log_density(mu)
        }
    }
}

/// Builds a 60-cell population table from independent marginal percentages
/// via largest-remainder rounding; the counts sum exactly to `total`.
pub fn census_table(
    name: &str,
    total: u64,
    sex_pct: [f64; 2],
    age_pct: [f64; 5],
    race_pct: [f64; 3],
    county_pct: [f64; 2],
) -> Result<PoststratTable> {
    let mut weights = [0.0f64; NUM_CELLS];
    for cell in Demographics::all_cells() {
        weights[cell.cell_index()] = sex_pct[cell.sex.index()]
            * age_pct[cell.age_group.index()]
            * race_pct[cell.race.index()]
            * county_pct[cell.county.index()];
    }
    PoststratTable::new(name, largest_remainder(total, &weights))
}

/// Weekly test volumes for the bundled synthetic scenario (weeks 18-60).
pub const SCENARIO_WEEKLY_TESTS: [u64; 43] = [
    95, 376, 582, 569, 419, 616, 640, 651, 627, 324, 1070, 668, 635, 711, 665, 750, 678, 700, 420,
    1021, 815, 742, 792, 817, 883, 843, 816, 839, 778, 712, 658, 975, 930, 720, 569, 62, 763, 833,
    904, 911, 816, 929, 792,
];

// Sample-mix marginals for the bundled scenario (percent).
const SAMPLE_SEX_PCT: [f64; 2] = [59.0, 41.0];
const SAMPLE_AGE_PCT: [f64; 5] = [3.0, 10.0, 46.0, 24.0, 17.0];
const SAMPLE_RACE_PCT: [f64; 3] = [72.0, 14.0, 14.0];
const SAMPLE_COUNTY_PCT: [f64; 2] = [84.0, 16.0];

// Target-population marginals for the bundled synthetic census tables.
const HOSPITAL_TOTAL: u64 = 35_838;
const HOSPITAL_SEX_PCT: [f64; 2] = [57.0, 43.0];
const HOSPITAL_AGE_PCT: [f64; 5] = [9.0, 12.0, 30.0, 20.0, 29.0];
const HOSPITAL_RACE_PCT: [f64; 3] = [65.0, 19.0, 16.0];
const HOSPITAL_COUNTY_PCT: [f64; 2] = [88.0, 12.0];

const COMMUNITY_TOTAL: u64 = 654_890;
const COMMUNITY_SEX_PCT: [f64; 2] = [51.0, 49.0];
const COMMUNITY_AGE_PCT: [f64; 5] = [24.0, 21.0, 40.0, 9.0, 6.0];
const COMMUNITY_RACE_PCT: [f64; 3] = [69.0, 19.0, 12.0];
const COMMUNITY_COUNTY_PCT: [f64; 2] = [74.0, 26.0];

// Weekly effects of the bundled truth before centering: a spring tail, a
// summer trough, an autumn wave peaking near week 45, and a winter rebound.
const SCENARIO_TIME_WAVE: [f64; 43] = [
    0.9, 0.8, 0.6, 0.4, 0.2, 0.0, -0.2, -0.4, -0.5, -0.6, -0.7, -0.7, -0.7, -0.6, -0.6, -0.5,
    -0.5, -0.4, -0.4, -0.3, -0.2, 0.0, 0.3, 0.6, 1.0, 1.4, 1.7, 1.8, 1.7, 1.5, 1.3, 1.1, 1.0,
    0.9, 0.8, 0.9, 1.1, 1.3, 1.4, 1.2, 1.0, 0.8, 0.6,
];

/// A complete synthetic study: ground-truth parameters, weekly test
/// allocation, target-population tables, and calibration data.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub truth: ParameterDraw,
    pub design: Design,
    pub hospital: PoststratTable,
    pub community: PoststratTable,
    pub calibration: CalibrationData,
}

impl Scenario {
    pub fn records(&self, seed: u64) -> Vec<TestRecord> {
        generate(&self.truth, &self.design, seed).expect("bundled truth is valid")
    }

    /// Poststratified weekly prevalence implied by the ground truth.
    pub fn true_prevalence(&self, table: &PoststratTable) -> Vec<f64> {
        self.design
            .weeks
            .iter()
            .map(|week| {
                let mut num = 0.0;
                let mut den = 0.0;
                for cell in Demographics::all_cells() {
                    let n = table.count(&cell) as f64;
                    if n > 0.0 {
                        num += n * true_incidence(&self.truth, &cell, week).unwrap();
                        den += n;
                    }
                }
                num / den
            })
            .collect()
    }
}

/// The bundled desk-scale scenario: ~700 tests/week over weeks 18-60 with a
/// demographically skewed sample, a sub-percent baseline prevalence with an
/// autumn wave, and an imperfect test (sensitivity 0.70, specificity 0.995).
pub fn bundled_scenario() -> Scenario {
    let weeks = WeekRange::new(18, 60).unwrap();

    let mut alpha_time: Vec<f64> = SCENARIO_TIME_WAVE.to_vec();
    let mean = alpha_time.iter().sum::<f64>() / alpha_time.len() as f64;
    for a in alpha_time.iter_mut() {
        *a -= mean;
    }

    let truth = ParameterDraw {
        beta1: -4.8,
        beta2: 0.15,
        alpha_age: [-0.30, -0.10, 0.0, 0.15, 0.25],
        alpha_race: [-0.10, 0.12, -0.02],
        alpha_county: [0.05, -0.05],
        alpha_age_male: [0.08, 0.04, 0.0, -0.04, -0.08],
        alpha_time,
        weeks,
        sigma_age: 0.25,
        sigma_race: 0.12,
        sigma_county: 0.07,
        sigma_age_male: 0.08,
        sigma_time: 1.0,
        gamma: 0.995,
        delta: 0.70,
    };

    let mut cell_probs = [0.0f64; NUM_CELLS];
    for cell in Demographics::all_cells() {
        cell_probs[cell.cell_index()] = SAMPLE_SEX_PCT[cell.sex.index()]
            * SAMPLE_AGE_PCT[cell.age_group.index()]
            * SAMPLE_RACE_PCT[cell.race.index()]
            * SAMPLE_COUNTY_PCT[cell.county.index()];
    }
    let design = Design::from_weekly_totals(weeks, &SCENARIO_WEEKLY_TESTS, &cell_probs).unwrap();

    Scenario {
        truth,
        design,
        hospital: hospital_table(),
        community: community_table(),
        calibration: CalibrationData::default_priors(),
    }
}

/// Synthetic hospital-population table (35,838 people).
pub fn hospital_table() -> PoststratTable {
    census_table(
        "hospital",
        HOSPITAL_TOTAL,
        HOSPITAL_SEX_PCT,
        HOSPITAL_AGE_PCT,
        HOSPITAL_RACE_PCT,
        HOSPITAL_COUNTY_PCT,
    )
    .unwrap()
}

/// Synthetic community-population table (654,890 people).
pub fn community_table() -> PoststratTable {
    census_table(
        "community",
        COMMUNITY_TOTAL,
        COMMUNITY_SEX_PCT,
        COMMUNITY_AGE_PCT,
        COMMUNITY_RACE_PCT,
        COMMUNITY_COUNTY_PCT,
    )
    .unwrap()
}

/// Derives a clinical-burden series (e.g. hospitalizations) from a weekly
/// prevalence trajectory: lagged by `lag_weeks`, scaled, and perturbed with
/// multiplicative noise. Weeks with no lagged source value are missing.
pub fn clinical_series(
    name: &str,
    weeks: WeekRange,
    prevalence: &[f64],
    lag_weeks: usize,
    scale: f64,
    noise_sd: f64,
    seed: u64,
) -> MetricSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<Option<f64>> = (0..weeks.len())
        .map(|off| {
            if off < lag_weeks {
                return None;
            }
            let base = prevalence[off - lag_weeks] * scale;
            let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
            Some((base * (1.0 + noise_sd * z)).max(0.0))
        })
        .collect();
    MetricSeries { name: name.into(), weeks, values }
}
