//! Surveillance-series comparison: peak weeks and pairwise lead-lag between
//! the true prevalence trajectory and derived clinical-burden series.
//!
//!     cargo run --release --example surveillance_compare

use mrp_prevalence::metrics::{lead_lag, peak_week};
use mrp_prevalence::series::MetricSeries;
use mrp_prevalence::synth::{bundled_scenario, clinical_series};

fn main() -> mrp_prevalence::Result<()> {
    let scenario = bundled_scenario();
    let weeks = scenario.design.weeks;
    let prevalence = scenario.true_prevalence(&scenario.community);

    let mrp = MetricSeries::dense("prevalence", weeks, prevalence.clone())?;
    // hospitalizations trail prevalence by one week; emergency-department
    // visits track it in the same week
    let hospitalizations =
        clinical_series("hospitalizations", weeks, &prevalence, 1, 20_000.0, 0.05, 1);
    let ed_visits = clinical_series("ed_visits", weeks, &prevalence, 0, 8_000.0, 0.05, 2);

    for series in [&mrp, &hospitalizations, &ed_visits] {
        println!("peak of {:<18} week {}", series.name, peak_week(series, 3)?);
    }

    println!();
    for other in [&hospitalizations, &ed_visits] {
        let result = lead_lag(&mrp, other, 4)?;
        println!(
            "prevalence vs {:<18} best lag {:+} weeks (r = {:.3})",
            other.name, result.best_lag, result.best_correlation
        );
        for (lag, r) in &result.profile {
            println!("    lag {lag:+}: r = {r:.3}");
        }
    }
    Ok(())
}
