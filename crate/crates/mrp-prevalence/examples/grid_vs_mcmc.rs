//! Oracle check: the sampler's moments on reduced one-parameter models must
//! agree with dense grid quadrature and closed forms.
//!
//!     cargo run --release --example grid_vs_mcmc

use mrp_prevalence::data::CalibrationData;
use mrp_prevalence::model::inv_logit;
use mrp_prevalence::sampler::{run_nuts, SamplerConfig};
use mrp_prevalence::stats;
use mrp_prevalence::synth::{expand_bounds, reduced, GridPosterior};

fn main() -> mrp_prevalence::Result<()> {
    let config = SamplerConfig {
        chains: 4,
        warmup_iterations: 500,
        sampling_iterations: 1000,
        seed: 42,
        ..SamplerConfig::default()
    };

    // binomial logistic intercept, 7 positives of 50
    let logistic = reduced::InterceptOnlyLogistic { positives: 7, tests: 50, prior_sd: 100.0 };
    let raw = run_nuts(&logistic, &config, None)?;
    let mcmc: Vec<f64> = raw.pooled(0).iter().map(|&b| inv_logit(b)).collect();
    let bounds = expand_bounds(&|b| logistic.log_density(b), 0.0, 2.0);
    let grid = GridPosterior::new(&|p| logistic.log_density(p[0]), &[bounds], 4000)?;
    let (grid_mean, grid_sd) = grid.mean_sd_of(&|p| inv_logit(p[0]));
    println!("intercept-only logistic, posterior of inverse-logit(beta):");
    println!("  mcmc mean {:.5} sd {:.5}", stats::mean(&mcmc), stats::sample_sd(&mcmc));
    println!("  grid mean {grid_mean:.5} sd {grid_sd:.5}");

    // specificity from the default calibration trials: conjugate beta
    let spec = reduced::ProbabilityFromTrials {
        trials: CalibrationData::default_priors().specificity_trials,
    };
    let raw = run_nuts(&spec, &config, None)?;
    let gammas: Vec<f64> = raw.pooled(0).iter().map(|&u| inv_logit(u)).collect();
    let (a, b) = spec.conjugate_beta();
    println!("\nspecificity from calibration trials:");
    println!("  mcmc mean {:.6}", stats::mean(&gammas));
    println!("  beta({a:.0}, {b:.0}) mean {:.6}", a / (a + b));

    // conjugate normal
    let normal = reduced::ConjugateNormal {
        prior_mean: 0.0,
        prior_sd: 3.0,
        obs_sd: 2.0,
        observations: vec![1.0, 2.5, 0.5, 1.5],
    };
    let raw = run_nuts(&normal, &config, None)?;
    let (mean, sd) = normal.posterior();
    println!("\nconjugate normal mean:");
    println!("  mcmc mean {:.5} sd {:.5}", stats::mean(&raw.pooled(0)), stats::sample_sd(&raw.pooled(0)));
    println!("  closed form mean {mean:.5} sd {sd:.5}");
    Ok(())
}
