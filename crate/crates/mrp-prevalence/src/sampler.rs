//! Gradient-based MCMC: a No-U-Turn sampler with dual-averaging step-size
//! adaptation and windowed diagonal mass-matrix estimation during warmup,
//! plus split-chain R-hat and effective-sample-size diagnostics.
//!
//! Chains are independent; each derives its generator from (seed, chain
//! index), so results do not depend on the degree of parallelism.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::data::WeekRange;
use crate::error::{Error, Result};
use crate::model::{ParameterDraw, Posterior};

/// A target density on an unconstrained parameter space, with gradient.
pub trait LogDensityModel: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density. May
    /// return `-inf` outside the supported region; must never return NaN.
    fn log_density_gradient(&self, position: &[f64], grad: &mut [f64]) -> f64;

    fn parameter_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup_iterations: usize,
    pub sampling_iterations: usize,
    pub seed: u64,
    pub target_acceptance: f64,
    pub max_step_depth: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup_iterations: 1000,
            sampling_iterations: 1000,
            seed: 20200428,
            target_acceptance: 0.8,
            max_step_depth: 10,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 1 || self.warmup_iterations < 1 || self.sampling_iterations < 1 {
            return Err(Error::InvalidConfig(
                "chains, warmup_iterations and sampling_iterations must all be >= 1".into(),
            ));
        }
        if self.max_step_depth < 1 {
            return Err(Error::InvalidConfig("max_step_depth must be >= 1".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target_acceptance must lie in (0, 1), got {}",
                self.target_acceptance
            )));
        }
        Ok(())
    }

    /// Convenience constructor used throughout the tests.
    pub fn with_iterations(chains: usize, warmup: usize, sampling: usize, seed: u64) -> Self {
        SamplerConfig {
            chains,
            warmup_iterations: warmup,
            sampling_iterations: sampling,
            seed,
            ..SamplerConfig::default()
        }
    }
}

/// Post-warmup positions of one chain on the unconstrained scale.
#[derive(Debug, Clone)]
pub struct RawChain {
    pub positions: Vec<Vec<f64>>,
    pub divergences: usize,
}

/// Post-warmup draws across all chains.
#[derive(Debug, Clone)]
pub struct RawDraws {
    pub dim: usize,
    pub chains: Vec<RawChain>,
}

impl RawDraws {
    /// Per-chain traces of coordinate `idx`.
    pub fn coordinate_chains(&self, idx: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.positions.iter().map(|q| q[idx]).collect())
            .collect()
    }

    pub fn pooled(&self, idx: usize) -> Vec<f64> {
        self.chains
            .iter()
            .flat_map(|c| c.positions.iter().map(|q| q[idx]))
            .collect()
    }
}

struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

impl State {
    fn clone_state(&self) -> State {
        State {
            q: self.q.clone(),
            p: self.p.clone(),
            grad: self.grad.clone(),
            logp: self.logp,
        }
    }
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(pi, m)| pi * pi * m).sum::<f64>()
}

fn sample_momentum(rng: &mut ChaCha8Rng, inv_mass: &[f64]) -> Vec<f64> {
    inv_mass
        .iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            z / m.sqrt()
        })
        .collect()
}

fn leapfrog<M: LogDensityModel + ?Sized>(
    model: &M,
    state: &State,
    step: f64,
    inv_mass: &[f64],
) -> State {
    let dim = state.q.len();
    let mut p: Vec<f64> = (0..dim).map(|i| state.p[i] + 0.5 * step * state.grad[i]).collect();
    let q: Vec<f64> = (0..dim).map(|i| state.q[i] + step * inv_mass[i] * p[i]).collect();
    let mut grad = vec![0.0; dim];
    let logp = model.log_density_gradient(&q, &mut grad);
    for i in 0..dim {
        p[i] += 0.5 * step * grad[i];
    }
    State { q, p, grad, logp }
}

fn no_u_turn(minus: &State, plus: &State, inv_mass: &[f64]) -> bool {
    let mut dot_minus = 0.0;
    let mut dot_plus = 0.0;
    for i in 0..minus.q.len() {
        let diff = plus.q[i] - minus.q[i];
        dot_minus += diff * inv_mass[i] * minus.p[i];
        dot_plus += diff * inv_mass[i] * plus.p[i];
    }
    dot_minus >= 0.0 && dot_plus >= 0.0
}

const DIVERGENCE_THRESHOLD: f64 = 1000.0;

struct Subtree {
    minus: State,
    plus: State,
    proposal_q: Vec<f64>,
    n: u64,
    cont: bool,
    alpha: f64,
    n_alpha: u64,
    divergent: bool,
}

#[allow(clippy::too_many_arguments)]
fn build_tree<M: LogDensityModel + ?Sized>(
    model: &M,
    from: &State,
    log_u: f64,
    direction: f64,
    depth: usize,
    step: f64,
    inv_mass: &[f64],
    joint0: f64,
    rng: &mut ChaCha8Rng,
) -> Subtree {
    if depth == 0 {
        let next = leapfrog(model, from, direction * step, inv_mass);
        let joint = next.logp - kinetic(&next.p, inv_mass);
        let joint = if joint.is_nan() { f64::NEG_INFINITY } else { joint };
        let divergent = log_u - DIVERGENCE_THRESHOLD > joint;
        let n = u64::from(log_u <= joint);
        let alpha = (joint - joint0).exp().min(1.0);
        return Subtree {
            minus: next.clone_state(),
            plus: next.clone_state(),
            proposal_q: next.q,
            n,
            cont: !divergent,
            alpha,
            n_alpha: 1,
            divergent,
        };
    }

    let mut inner = build_tree(model, from, log_u, direction, depth - 1, step, inv_mass, joint0, rng);
    if inner.cont {
        let start = if direction < 0.0 { &inner.minus } else { &inner.plus };
        let outer = build_tree(model, start, log_u, direction, depth - 1, step, inv_mass, joint0, rng);
        if direction < 0.0 {
            inner.minus = outer.minus;
        } else {
            inner.plus = outer.plus;
        }
        let total = inner.n + outer.n;
        if outer.n > 0 && rng.random::<f64>() < outer.n as f64 / total.max(1) as f64 {
            inner.proposal_q = outer.proposal_q;
        }
        inner.n = total;
        inner.alpha += outer.alpha;
        inner.n_alpha += outer.n_alpha;
        inner.divergent = inner.divergent || outer.divergent;
        inner.cont = outer.cont && no_u_turn(&inner.minus, &inner.plus, inv_mass);
    }
    inner
}

struct TransitionInfo {
    accept_stat: f64,
    divergent: bool,
}

fn transition<M: LogDensityModel + ?Sized>(
    model: &M,
    state: State,
    step: f64,
    inv_mass: &[f64],
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> (State, TransitionInfo) {
    let p0 = sample_momentum(rng, inv_mass);
    let joint0 = state.logp - kinetic(&p0, inv_mass);
    let exp1: f64 = Exp1.sample(rng);
    let log_u = joint0 - exp1;

    let root = State {
        q: state.q.clone(),
        p: p0,
        grad: state.grad.clone(),
        logp: state.logp,
    };
    let mut minus = root.clone_state();
    let mut plus = root.clone_state();
    let mut proposal_q = state.q.clone();
    let mut n: u64 = 1;
    let mut cont = true;
    let mut depth = 0;
    let mut alpha = 0.0;
    let mut n_alpha: u64 = 1;
    let mut divergent = false;

    while cont && depth < max_depth {
        let direction: f64 = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
        let from = if direction < 0.0 { &minus } else { &plus };
        let subtree =
            build_tree(model, from, log_u, direction, depth, step, inv_mass, joint0, rng);
        if direction < 0.0 {
            minus = subtree.minus;
        } else {
            plus = subtree.plus;
        }
        if subtree.cont && subtree.n > 0 {
            let accept_prob = (subtree.n as f64 / n as f64).min(1.0);
            if rng.random::<f64>() < accept_prob {
                proposal_q = subtree.proposal_q;
            }
        }
        n += subtree.n;
        alpha = subtree.alpha;
        n_alpha = subtree.n_alpha;
        divergent = divergent || subtree.divergent;
        cont = subtree.cont && no_u_turn(&minus, &plus, inv_mass);
        depth += 1;
    }

    let dim = proposal_q.len();
    let mut grad = vec![0.0; dim];
    let logp = model.log_density_gradient(&proposal_q, &mut grad);
    let next = State { q: proposal_q, p: vec![0.0; dim], grad, logp };
    let accept_stat = if n_alpha > 0 { alpha / n_alpha as f64 } else { 0.0 };
    (next, TransitionInfo { accept_stat, divergent })
}

fn find_reasonable_step<M: LogDensityModel + ?Sized>(
    model: &M,
    state: &State,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let p0 = sample_momentum(rng, inv_mass);
    let probe = State {
        q: state.q.clone(),
        p: p0,
        grad: state.grad.clone(),
        logp: state.logp,
    };
    let joint0 = probe.logp - kinetic(&probe.p, inv_mass);
    let mut step = 1.0;
    let joint_at = |eps: f64| {
        let next = leapfrog(model, &probe, eps, inv_mass);
        let j = next.logp - kinetic(&next.p, inv_mass);
        if j.is_nan() { f64::NEG_INFINITY } else { j }
    };
    let mut joint = joint_at(step);
    let mut guard = 0;
    while !joint.is_finite() && guard < 60 {
        step *= 0.5;
        joint = joint_at(step);
        guard += 1;
    }
    let dir: f64 = if joint - joint0 > (0.5f64).ln() { 1.0 } else { -1.0 };
    let mut guard = 0;
    while dir * (joint - joint0) > -dir * std::f64::consts::LN_2 && guard < 200 {
        step *= (2.0f64).powf(dir);
        if !(1e-10..=1e7).contains(&step) {
            break;
        }
        joint = joint_at(step);
        guard += 1;
    }
    step.clamp(1e-10, 1e7)
}

struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_step_bar: f64,
    counter: usize,
    target: f64,
    step: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(initial_step: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * initial_step).ln(),
            h_bar: 0.0,
            log_step_bar: 0.0,
            counter: 0,
            target,
            step: initial_step,
        }
    }

    fn update(&mut self, accept_stat: f64) {
        self.counter += 1;
        let m = self.counter as f64;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat);
        let log_step = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = m.powf(-Self::KAPPA);
        self.log_step_bar = eta * log_step + (1.0 - eta) * self.log_step_bar;
        self.step = log_step.exp();
    }

    fn adapted_step(&self) -> f64 {
        self.log_step_bar.exp()
    }
}

struct RunningMoments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningMoments {
    fn new(dim: usize) -> Self {
        RunningMoments { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn reset(&mut self) {
        self.n = 0;
        self.mean.fill(0.0);
        self.m2.fill(0.0);
    }

    fn update(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate shrunk toward a small constant.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        let shrink = n / (n + 5.0);
        self.m2
            .iter()
            .map(|m2| {
                let var = if self.n > 1 { m2 / (n - 1.0) } else { 1.0 };
                (shrink * var + 1e-3 * (1.0 - shrink)).max(1e-10)
            })
            .collect()
    }
}

const MASS_INIT_BUFFER: usize = 75;
const MASS_TERM_BUFFER: usize = 50;
const MASS_BASE_WINDOW: usize = 25;

/// Warmup iterations (1-indexed) at which the mass matrix is re-estimated.
fn mass_window_ends(warmup: usize) -> Vec<usize> {
    if warmup < MASS_INIT_BUFFER + MASS_BASE_WINDOW + MASS_TERM_BUFFER {
        return Vec::new();
    }
    let mut ends = Vec::new();
    let mut begin = MASS_INIT_BUFFER;
    let mut size = MASS_BASE_WINDOW;
    loop {
        let end = begin + size;
        if begin + 3 * size > warmup - MASS_TERM_BUFFER {
            ends.push(warmup - MASS_TERM_BUFFER);
            break;
        }
        ends.push(end);
        begin = end;
        size *= 2;
    }
    ends
}

fn run_chain<M: LogDensityModel + ?Sized>(
    model: &M,
    config: &SamplerConfig,
    chain_index: usize,
    init: Option<&[f64]>,
) -> Result<RawChain> {
    let dim = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain_index as u64);

    let q0: Vec<f64> = match init {
        Some(q) => q.to_vec(),
        None => (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let mut grad = vec![0.0; dim];
    let logp = model.log_density_gradient(&q0, &mut grad);
    if !logp.is_finite() {
        return Err(Error::NonFiniteInit);
    }
    let mut state = State { q: q0, p: vec![0.0; dim], grad, logp };

    let mut inv_mass = vec![1.0; dim];
    let step0 = find_reasonable_step(model, &state, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(step0, config.target_acceptance);
    let mut step = step0;

    let window_ends = mass_window_ends(config.warmup_iterations);
    let mut window_cursor = 0;
    let mut moments = RunningMoments::new(dim);

    let warmup = config.warmup_iterations;
    let total = warmup + config.sampling_iterations;
    let mut positions = Vec::with_capacity(config.sampling_iterations);
    let mut divergences = 0;

    for m in 1..=total {
        let (next, info) = transition(model, state, step, &inv_mass, config.max_step_depth, &mut rng);
        state = next;

        if m <= warmup {
            da.update(info.accept_stat);
            step = da.step;
            if window_cursor < window_ends.len() && m > MASS_INIT_BUFFER {
                moments.update(&state.q);
                if m == window_ends[window_cursor] {
                    if moments.n >= 10 {
                        inv_mass = moments.regularized_variance();
                    }
                    moments.reset();
                    window_cursor += 1;
                    let fresh = find_reasonable_step(model, &state, &inv_mass, &mut rng);
                    da = DualAveraging::new(fresh, config.target_acceptance);
                    step = fresh;
                }
            }
            if m == warmup {
                step = da.adapted_step();
            }
        } else {
            if info.divergent {
                divergences += 1;
            }
            positions.push(state.q.clone());
        }
    }

    Ok(RawChain { positions, divergences })
}

/// Runs NUTS over any gradient target. Chains execute concurrently; the
/// output is identical regardless of parallelism because each chain's
/// generator depends only on (seed, chain index).
pub fn run_nuts<M: LogDensityModel>(
    model: &M,
    config: &SamplerConfig,
    init: Option<&[f64]>,
) -> Result<RawDraws> {
    config.validate()?;
    if let Some(q) = init {
        if q.len() != model.dim() {
            return Err(Error::InvalidConfig(format!(
                "initial point has {} coordinates, model has {}",
                q.len(),
                model.dim()
            )));
        }
    }
    let chain_results: Vec<Result<RawChain>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|c| scope.spawn(move || run_chain(model, config, c, init)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    let mut chains = Vec::with_capacity(config.chains);
    for r in chain_results {
        chains.push(r?);
    }
    Ok(RawDraws { dim: model.dim(), chains })
}

/// Per-parameter convergence summary.
#[derive(Debug, Clone)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    pub ess: f64,
}

impl ParameterDiagnostics {
    /// True when the trace carried no information (e.g. a constant).
    pub fn degenerate(&self) -> bool {
        !self.rhat.is_finite() || !self.ess.is_finite()
    }
}

/// Posterior draws of the full model with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub weeks: WeekRange,
    pub parameter_names: Vec<String>,
    /// Chain-major: all draws of chain 0, then chain 1, ...
    pub draws: Vec<ParameterDraw>,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub divergences: Vec<usize>,
    pub diagnostics: Vec<ParameterDiagnostics>,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn draw(&self, chain: usize, iteration: usize) -> &ParameterDraw {
        &self.draws[chain * self.draws_per_chain + iteration]
    }

    /// Per-chain traces of the scalar parameter at `index` (flattened
    /// constrained order).
    pub fn scalar_chains(&self, index: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| {
                (0..self.draws_per_chain)
                    .map(|i| self.draw(c, i).flatten()[index])
                    .collect()
            })
            .collect()
    }
}

/// Samples the hierarchical posterior and back-transforms every draw to the
/// constrained scale.
pub fn sample(
    posterior: &Posterior,
    config: &SamplerConfig,
    init: Option<&ParameterDraw>,
) -> Result<PosteriorDraws> {
    let init_vec = match init {
        Some(draw) => Some(posterior.to_unconstrained(draw)?),
        None => None,
    };
    let raw = run_nuts(posterior, config, init_vec.as_deref())?;

    let mut draws = Vec::with_capacity(config.chains * config.sampling_iterations);
    for chain in &raw.chains {
        for q in &chain.positions {
            draws.push(posterior.from_unconstrained(q));
        }
    }
    let weeks = posterior.weeks();
    let mut out = PosteriorDraws {
        weeks,
        parameter_names: ParameterDraw::parameter_names(&weeks),
        draws,
        chains: config.chains,
        draws_per_chain: config.sampling_iterations,
        divergences: raw.chains.iter().map(|c| c.divergences).collect(),
        diagnostics: Vec::new(),
        warnings: Vec::new(),
    };

    let total_divergent: usize = out.divergences.iter().sum();
    let frac = total_divergent as f64 / out.n_draws() as f64;
    if frac > 0.10 {
        out.warnings.push(format!(
            "{total_divergent} of {} post-warmup iterations diverged ({:.0}%); \
             estimates may be unreliable",
            out.n_draws(),
            100.0 * frac
        ));
    }
    if config.chains >= 2 {
        out.diagnostics = diagnostics(&out)?;
    } else {
        out.warnings.push("single chain: R-hat/ESS diagnostics unavailable".into());
    }
    Ok(out)
}

/// Split-chain R-hat and effective sample size for every scalar parameter.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<Vec<ParameterDiagnostics>> {
    if draws.chains < 2 {
        return Err(Error::TooFew { needed: 2, got: draws.chains, what: "chains" });
    }
    if draws.draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let mut out = Vec::with_capacity(draws.parameter_names.len());
    for (idx, name) in draws.parameter_names.iter().enumerate() {
        let chains = draws.scalar_chains(idx);
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let mean = crate::stats::mean(&pooled);
        let sd = crate::stats::sample_sd(&pooled);
        out.push(ParameterDiagnostics {
            name: name.clone(),
            mean,
            sd,
            rhat: split_rhat(&chains),
            ess: effective_sample_size(&chains),
        });
    }
    Ok(out)
}

fn split_halves(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let mid = c.len() / 2;
        out.push(&c[..mid]);
        out.push(&c[c.len() - mid..]);
    }
    out
}

/// Split-chain potential scale reduction factor. NaN when the chains carry
/// no variation (degenerate trace).
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let split = split_halves(chains);
    let m = split.len() as f64;
    let n = split[0].len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = split.iter().map(|c| crate::stats::mean(c)).collect();
    let grand = crate::stats::mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = split
        .iter()
        .zip(&means)
        .map(|(c, &cm)| c.iter().map(|x| (x - cm).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w < 1e-300 {
        return f64::NAN;
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Effective sample size via split chains and Geyer's initial positive
/// sequence on the pooled autocorrelation. NaN for degenerate traces.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let split = split_halves(chains);
    let m = split.len();
    let n = split[0].len();
    if n < 4 {
        return f64::NAN;
    }
    let means: Vec<f64> = split.iter().map(|c| crate::stats::mean(c)).collect();
    let vars: Vec<f64> = split
        .iter()
        .zip(&means)
        .map(|(c, &cm)| c.iter().map(|x| (x - cm).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let w = crate::stats::mean(&vars);
    let grand = crate::stats::mean(&means);
    let b_over_n =
        means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0).max(1.0);
    let var_plus = w * (n as f64 - 1.0) / n as f64 + b_over_n;
    if var_plus < 1e-300 || !var_plus.is_finite() {
        return f64::NAN;
    }

    let acov = |chain: &[f64], cm: f64, lag: usize| -> f64 {
        let mut s = 0.0;
        for t in 0..(n - lag) {
            s += (chain[t] - cm) * (chain[t + lag] - cm);
        }
        s / n as f64
    };

    let mut rho = Vec::with_capacity(n);
    rho.push(1.0);
    for lag in 1..n {
        let mean_acov =
            split.iter().zip(&means).map(|(c, &cm)| acov(c, cm, lag)).sum::<f64>() / m as f64;
        rho.push(1.0 - (w - mean_acov) / var_plus);
    }

    // Geyer initial positive sequence over consecutive pairs.
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < rho.len() {
        let pair = rho[lag] + rho[lag + 1];
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    let total = (m * n) as f64;
    (total / tau).min(total)
}

/// Writes draws in wide CSV form: one row per draw, columns
/// `chain,iteration,<parameter names>`. Values use shortest round-trip
/// formatting, so reading back reproduces the exact floats.
pub fn write_draws_csv(path: &std::path::Path, draws: &PosteriorDraws) -> Result<()> {
    let mut out = String::from("chain,iteration");
    for name in &draws.parameter_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for chain in 0..draws.chains {
        for iter in 0..draws.draws_per_chain {
            out.push_str(&format!("{chain},{iter}"));
            for v in draws.draw(chain, iter).flatten() {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a draws CSV back. The week range is recovered from the
/// `alpha_time[w]` column names; diagnostics are recomputed when at least
/// two chains are present.
pub fn read_draws_csv(path: &std::path::Path) -> Result<PosteriorDraws> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::BadHeader {
        path: path.display().to_string(),
        expected: "chain,iteration,...".into(),
        found: String::new(),
    })?;
    let columns: Vec<&str> = header.trim().split(',').collect();
    if columns.len() < 3 || columns[0] != "chain" || columns[1] != "iteration" {
        return Err(Error::BadHeader {
            path: path.display().to_string(),
            expected: "chain,iteration,<parameters>".into(),
            found: header.into(),
        });
    }
    let time_weeks: Vec<i32> = columns
        .iter()
        .filter_map(|c| {
            c.strip_prefix("alpha_time[")
                .and_then(|rest| rest.strip_suffix(']'))
                .and_then(|w| w.parse().ok())
        })
        .collect();
    if time_weeks.is_empty() {
        return Err(Error::Other(format!(
            "{}: no alpha_time columns found",
            path.display()
        )));
    }
    let weeks = WeekRange::new(time_weeks[0], *time_weeks.last().unwrap())?;
    let expected: Vec<String> = ParameterDraw::parameter_names(&weeks);
    let found: Vec<String> = columns[2..].iter().map(|s| s.to_string()).collect();
    if found != expected {
        return Err(Error::Other(format!(
            "{}: parameter columns do not match the canonical layout for weeks {weeks}",
            path.display()
        )));
    }

    let mut per_chain: std::collections::BTreeMap<usize, Vec<ParameterDraw>> =
        std::collections::BTreeMap::new();
    for (i, line) in lines {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::MalformedRow {
                row,
                message: format!("expected {} fields, got {}", columns.len(), fields.len()),
            });
        }
        let chain: usize = fields[0]
            .parse()
            .map_err(|_| Error::MalformedRow { row, message: "bad chain index".into() })?;
        let values: Vec<f64> = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::MalformedRow { row, message: "bad parameter value".into() })?;
        per_chain.entry(chain).or_default().push(ParameterDraw::from_flattened(weeks, &values)?);
    }
    if per_chain.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let chains = per_chain.len();
    let draws_per_chain = per_chain.values().next().unwrap().len();
    for (chain, draws) in &per_chain {
        if draws.len() != draws_per_chain {
            return Err(Error::Other(format!(
                "chain {chain} has {} draws, expected {draws_per_chain}",
                draws.len()
            )));
        }
    }
    let draws: Vec<ParameterDraw> = per_chain.into_values().flatten().collect();
    let mut out = PosteriorDraws {
        weeks,
        parameter_names: expected,
        draws,
        chains,
        draws_per_chain,
        divergences: vec![0; chains],
        diagnostics: Vec::new(),
        warnings: Vec::new(),
    };
    if chains >= 2 {
        out.diagnostics = diagnostics(&out)?;
    }
    Ok(out)
}

/// Writes the per-parameter diagnostics table.
pub fn write_diagnostics_csv(path: &std::path::Path, draws: &PosteriorDraws) -> Result<()> {
    let mut out = String::from("parameter,mean,sd,rhat,ess\n");
    for d in &draws.diagnostics {
        out.push_str(&format!("{},{},{},{},{}\n", d.name, d.mean, d.sd, d.rhat, d.ess));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
