//! Posterior predictive check: refit synthetic data and compare weekly
//! replicated positivity intervals with the observed rates.
//!
//!     cargo run --release --example posterior_check

use mrp_prevalence::metrics::posterior_predictive_check;
use mrp_prevalence::model::{ModelConfig, Posterior};
use mrp_prevalence::sampler::{sample, SamplerConfig};
use mrp_prevalence::synth::bundled_scenario;

fn main() -> mrp_prevalence::Result<()> {
    let scenario = bundled_scenario();
    let records = scenario.records(11);
    let posterior = Posterior::new(
        &records,
        &scenario.calibration,
        ModelConfig::new(scenario.design.weeks),
    )?;
    let config = SamplerConfig {
        chains: 2,
        warmup_iterations: 300,
        sampling_iterations: 300,
        seed: 12,
        ..SamplerConfig::default()
    };
    let draws = sample(&posterior, &config, None)?;
    let report = posterior_predictive_check(&draws, &records, 13)?;

    println!("week  observed    replicated mean [95% predictive]   inside?");
    for row in &report.rows {
        match (row.observed, row.replicated_mean, row.replicated_q025, row.replicated_q975) {
            (Some(obs), Some(mean), Some(lo), Some(hi)) => println!(
                "{:>4}  {:>7.4}%   {:>7.4}% [{:.4}%, {:.4}%]   {}",
                row.week,
                100.0 * obs,
                100.0 * mean,
                100.0 * lo,
                100.0 * hi,
                if row.covered == Some(true) { "yes" } else { "NO" },
            ),
            _ => println!("{:>4}  (no tests)", row.week),
        }
    }
    println!(
        "\ncoverage: {:.0}% of observed weeks inside the replicated 95% interval",
        100.0 * report.coverage()
    );
    Ok(())
}
