//! End-to-end fit: generate the bundled synthetic scenario, sample the
//! posterior, and poststratify to the hospital and community populations.
//!
//!     cargo run --release --example fit_and_poststratify

use mrp_prevalence::model::{ModelConfig, Posterior};
use mrp_prevalence::poststrat::poststratify;
use mrp_prevalence::sampler::{sample, SamplerConfig};
use mrp_prevalence::synth::bundled_scenario;

fn main() -> mrp_prevalence::Result<()> {
    let scenario = bundled_scenario();
    let records = scenario.records(20200428);
    println!("generated {} synthetic test records", records.len());

    let weeks = scenario.design.weeks;
    let posterior = Posterior::new(&records, &scenario.calibration, ModelConfig::new(weeks))?;
    let config = SamplerConfig {
        chains: 2,
        warmup_iterations: 400,
        sampling_iterations: 400,
        seed: 7,
        ..SamplerConfig::default()
    };
    let draws = sample(&posterior, &config, None)?;
    println!(
        "sampled {} draws ({} chains); divergences {:?}",
        draws.n_draws(),
        draws.chains,
        draws.divergences
    );

    let hospital = poststratify(&draws, &scenario.hospital, weeks)?;
    let community = poststratify(&draws, &scenario.community, weeks)?;
    let truth = scenario.true_prevalence(&scenario.community);

    println!("\nweek  community mean [95% interval]    hospital mean   true community");
    for (off, week) in weeks.iter().enumerate() {
        println!(
            "{week:>4}  {:>9.4}% [{:.4}%, {:.4}%]   {:>9.4}%      {:>9.4}%",
            100.0 * community.mean[off],
            100.0 * community.q025[off],
            100.0 * community.q975[off],
            100.0 * hospital.mean[off],
            100.0 * truth[off],
        );
    }
    Ok(())
}
