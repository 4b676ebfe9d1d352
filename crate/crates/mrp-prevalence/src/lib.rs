//! Prevalence tracking from routinely collected test records via multilevel
//! regression and poststratification (MRP).
//!
//! The pipeline fits a Bayesian hierarchical logistic regression to weekly
//! test results, correcting for imperfect test sensitivity and specificity
//! with binomial calibration data, then reweights cell-level incidence to
//! target populations. Model checking (posterior predictive checks,
//! prior-sensitivity sweeps) and surveillance-series comparison (peak
//! detection, lead-lag analysis) sit on top.
//!
//! Start with the runnable programs under `examples/`, or the `cli` module
//! for the file-based pipeline.

pub mod cli;
pub mod data;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod poststrat;
pub mod sampler;
pub mod series;
pub mod stats;
pub mod synth;

pub use data::{
    AgeGroup, CalibrationData, CellWeekCounts, County, Demographics, PoststratTable, Race, Sex,
    TestRecord, WeekRange, NUM_CELLS,
};
pub use error::{Error, Result};
pub use metrics::{lead_lag, peak_week, posterior_predictive_check, sensitivity_sweep};
pub use model::{
    analytic_incidence, linear_predictor, true_incidence, ModelConfig, ParameterDraw, Posterior,
};
pub use poststrat::{
    describe_records, describe_table, poststratify, raw_weekly_positivity, DescriptiveSummary,
    PrevalenceSeries,
};
pub use sampler::{diagnostics, run_nuts, sample, PosteriorDraws, SamplerConfig};
pub use series::MetricSeries;
pub use synth::{bundled_scenario, generate, grid_oracle, Design, Scenario};
