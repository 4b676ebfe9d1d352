//! Prior-sensitivity sweep: refit with the sensitivity calibration replaced
//! by 70/100 and 55/100 and compare the resulting prevalence scales. Lower
//! assumed sensitivity inflates the estimates by roughly its reciprocal
//! while leaving the weekly trend intact.
//!
//!     cargo run --release --example sensitivity_sweep

use mrp_prevalence::data::aggregate_records;
use mrp_prevalence::metrics::sensitivity_sweep;
use mrp_prevalence::model::ModelConfig;
use mrp_prevalence::sampler::SamplerConfig;
use mrp_prevalence::stats;
use mrp_prevalence::synth::bundled_scenario;

fn main() -> mrp_prevalence::Result<()> {
    let scenario = bundled_scenario();
    let records = scenario.records(5);
    let weeks = scenario.design.weeks;
    let counts = aggregate_records(&records, &weeks)?;

    let sampler = SamplerConfig {
        chains: 2,
        warmup_iterations: 300,
        sampling_iterations: 300,
        seed: 6,
        ..SamplerConfig::default()
    };
    let sweep_values = [0.70, 0.55];
    let fits = sensitivity_sweep(
        &counts,
        &scenario.calibration,
        &[&scenario.community],
        &ModelConfig::new(weeks),
        &sampler,
        &sweep_values,
    )?;

    for fit in &fits {
        let mean = stats::mean(&fit.series[0].mean);
        println!(
            "prior sensitivity {:.2}: average weekly prevalence {:.4}%",
            fit.sensitivity_center,
            100.0 * mean
        );
    }
    let ratio = stats::mean(&fits[1].series[0].mean) / stats::mean(&fits[0].series[0].mean);
    println!(
        "\ninflation ratio (0.55 vs 0.70): {ratio:.3}; reciprocal ratio {:.3}",
        0.70 / 0.55
    );
    Ok(())
}
