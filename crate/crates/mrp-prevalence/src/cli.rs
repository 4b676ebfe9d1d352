//! Command-line pipeline: each subcommand reads its inputs from disk and
//! writes plot-ready CSV outputs, so stages compose through files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::aggregate_records;
use crate::error::{Error, Result};
use crate::ingest::{self, RunConfig};
use crate::metrics;
use crate::model::{ModelConfig, Posterior};
use crate::poststrat::{self, PrevalenceSeries, PREVALENCE_CSV_HEADER};
use crate::sampler::{self, PosteriorDraws};
use crate::series::{self, MetricSeries, METRIC_CSV_HEADER};
use crate::synth;

#[derive(Parser)]
#[command(
    name = "mrp-prevalence",
    version,
    about = "Prevalence tracking from routine test records via multilevel regression and poststratification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fit the hierarchical measurement-error model and write posterior draws
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Override the sampler seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory from the config
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Poststratify posterior draws to each configured population
    Poststratify {
        #[arg(long)]
        config: PathBuf,
        /// Draws CSV from a previous `fit` (default: <out>/draws.csv)
        #[arg(long)]
        draws: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior predictive check against the observed weekly positivity
    Ppc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        draws: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the bundled synthetic scenario (records, tables, calibration,
    /// reference series, and a ready-to-run config)
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20200428)]
        seed: u64,
    },
    /// Compare weekly series: peak weeks and pairwise lead-lag
    Compare {
        /// Series CSV (metric or prevalence format); repeatable
        #[arg(long = "series", required = true)]
        series: Vec<PathBuf>,
        #[arg(long, default_value_t = 4)]
        max_lag: usize,
        /// Smoothing window for peak detection (odd)
        #[arg(long, default_value_t = 3)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refit under each prior-sensitivity center and poststratify
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config, seed, out } => cmd_fit(&config, seed, out),
        Command::Poststratify { config, draws, out } => cmd_poststratify(&config, draws, out),
        Command::Ppc { config, draws, seed, out } => cmd_ppc(&config, draws, seed, out),
        Command::Simulate { out, seed } => cmd_simulate(&out, seed),
        Command::Compare { series, max_lag, window, out } => {
            cmd_compare(&series, max_lag, window, &out)
        }
        Command::Sweep { config, seed, out } => cmd_sweep(&config, seed, out),
    }
}

fn load_run_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut config = ingest::load_config(path)?;
    if let Some(seed) = seed {
        config.sampler.seed = seed;
    }
    if let Some(out) = out {
        config.out_dir = out;
    }
    Ok(config)
}

fn ensure_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    version: String,
    seed: u64,
    week_start: i32,
    week_end: i32,
    chains: usize,
    warmup_iterations: usize,
    sampling_iterations: usize,
    target_acceptance: f64,
    max_step_depth: usize,
    /// Input file name -> SHA-256 of its bytes.
    inputs: BTreeMap<String, String>,
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_manifest(config: &RunConfig, command: &str, inputs: &[&Path]) -> Result<()> {
    let mut checksums = BTreeMap::new();
    for path in inputs {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        checksums.insert(name, sha256_hex(path)?);
    }
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.sampler.seed,
        week_start: config.weeks.first(),
        week_end: config.weeks.last(),
        chains: config.sampler.chains,
        warmup_iterations: config.sampler.warmup_iterations,
        sampling_iterations: config.sampler.sampling_iterations,
        target_acceptance: config.sampler.target_acceptance,
        max_step_depth: config.sampler.max_step_depth,
        inputs: checksums,
    };
    let path = config.out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_fit(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let config = load_run_config(config_path, seed, out)?;
    let records_path = config.records_path()?;
    let calibration_path = config.calibration_path()?;
    ensure_exists(records_path)?;
    ensure_exists(calibration_path)?;
    for path in config.poststrat.values() {
        ensure_exists(path)?;
    }

    let records = ingest::load_records(records_path, &config.weeks)?;
    let calibration = ingest::load_calibration(calibration_path)?;
    let posterior = Posterior::new(&records, &calibration, ModelConfig::new(config.weeks))?;
    println!(
        "fitting {} records over weeks {} ({} cell-weeks, {} chains x {}+{} iterations)",
        records.len(),
        config.weeks,
        posterior.n_cell_weeks(),
        config.sampler.chains,
        config.sampler.warmup_iterations,
        config.sampler.sampling_iterations,
    );
    let draws = sampler::sample(&posterior, &config.sampler, None)?;

    create_out_dir(&config.out_dir)?;
    sampler::write_draws_csv(&config.out_dir.join("draws.csv"), &draws)?;
    sampler::write_diagnostics_csv(&config.out_dir.join("diagnostics.csv"), &draws)?;
    let mut inputs: Vec<&Path> = vec![records_path, calibration_path];
    inputs.extend(config.poststrat.values().map(|p| p.as_path()));
    write_manifest(&config, "fit", &inputs)?;

    let worst_rhat = draws
        .diagnostics
        .iter()
        .filter(|d| d.rhat.is_finite())
        .map(|d| d.rhat)
        .fold(f64::NAN, f64::max);
    println!(
        "wrote {} draws to {}; divergences per chain {:?}; max rhat {:.3}",
        draws.n_draws(),
        config.out_dir.join("draws.csv").display(),
        draws.divergences,
        worst_rhat,
    );
    for warning in &draws.warnings {
        println!("warning: {warning}");
    }
    Ok(())
}

fn load_draws(config: &RunConfig, draws: Option<PathBuf>) -> Result<PosteriorDraws> {
    let path = draws.unwrap_or_else(|| config.out_dir.join("draws.csv"));
    ensure_exists(&path)?;
    sampler::read_draws_csv(&path)
}

fn cmd_poststratify(
    config_path: &Path,
    draws_path: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = load_run_config(config_path, None, out)?;
    if config.poststrat.is_empty() {
        return Err(Error::InvalidConfig("config lists no poststratification tables".into()));
    }
    let draws = load_draws(&config, draws_path)?;
    create_out_dir(&config.out_dir)?;

    let mut all_series: Vec<PrevalenceSeries> = Vec::new();
    for (name, path) in &config.poststrat {
        ensure_exists(path)?;
        let table = ingest::load_poststrat(path, name)?;
        let series = poststrat::poststratify(&draws, &table, config.weeks)?;
        println!(
            "{name}: poststratified {} draws over weeks {} (population {})",
            draws.n_draws(),
            config.weeks,
            table.total(),
        );
        all_series.push(series);
    }
    let refs: Vec<&PrevalenceSeries> = all_series.iter().collect();
    let prevalence_path = config.out_dir.join("prevalence.csv");
    poststrat::write_prevalence_csv(&prevalence_path, &refs)?;
    println!("wrote {}", prevalence_path.display());

    // raw positivity and positive counts for downstream comparison
    if let Some(records_path) = config.records.as_deref() {
        ensure_exists(records_path)?;
        let records = ingest::load_records(records_path, &config.weeks)?;
        let positivity = poststrat::raw_weekly_positivity(&records, config.weeks);
        let counts = poststrat::weekly_positive_counts(&records, config.weeks);
        series::write_metric_csv(&config.out_dir.join("positivity.csv"), &[&positivity])?;
        series::write_metric_csv(&config.out_dir.join("positive_counts.csv"), &[&counts])?;
        println!(
            "wrote {} and {}",
            config.out_dir.join("positivity.csv").display(),
            config.out_dir.join("positive_counts.csv").display()
        );
    }
    Ok(())
}

fn cmd_ppc(
    config_path: &Path,
    draws_path: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = load_run_config(config_path, seed, out)?;
    let records_path = config.records_path()?;
    ensure_exists(records_path)?;
    let records = ingest::load_records(records_path, &config.weeks)?;
    let draws = load_draws(&config, draws_path)?;
    let report = metrics::posterior_predictive_check(&draws, &records, config.sampler.seed)?;
    create_out_dir(&config.out_dir)?;
    let path = config.out_dir.join("ppc.csv");
    metrics::write_ppc_csv(&path, &report)?;
    println!(
        "wrote {}; {:.0}% of observed weeks inside the 95% replicated interval",
        path.display(),
        100.0 * report.coverage(),
    );
    Ok(())
}

fn cmd_simulate(out: &Path, seed: u64) -> Result<()> {
    let scenario = synth::bundled_scenario();
    let records = scenario.records(seed);
    create_out_dir(out)?;

    ingest::write_records(&out.join("records.csv"), &records)?;
    ingest::write_poststrat(&out.join("poststrat_hospital.csv"), &scenario.hospital)?;
    ingest::write_poststrat(&out.join("poststrat_community.csv"), &scenario.community)?;
    ingest::write_calibration(&out.join("calibration.csv"), &scenario.calibration)?;

    let weeks = scenario.design.weeks;
    let hosp_truth = scenario.true_prevalence(&scenario.hospital);
    let comm_truth = scenario.true_prevalence(&scenario.community);
    let truth_series = [
        MetricSeries::dense("true_prevalence_hospital", weeks, hosp_truth)?,
        MetricSeries::dense("true_prevalence_community", weeks, comm_truth.clone())?,
    ];
    series::write_metric_csv(
        &out.join("truth_prevalence.csv"),
        &[&truth_series[0], &truth_series[1]],
    )?;

    // clinical-burden reference series: hospitalizations trail prevalence by
    // one week, emergency visits track it concurrently
    let hospitalizations =
        synth::clinical_series("hospitalizations", weeks, &comm_truth, 1, 20_000.0, 0.05, seed ^ 0x5eed_0001);
    let ed_visits =
        synth::clinical_series("ed_visits", weeks, &comm_truth, 0, 8_000.0, 0.05, seed ^ 0x5eed_0002);
    series::write_metric_csv(&out.join("hospitalizations.csv"), &[&hospitalizations])?;
    series::write_metric_csv(&out.join("ed_visits.csv"), &[&ed_visits])?;

    let config_text = format!(
        r#"records = "records.csv"
calibration = "calibration.csv"
out_dir = "out"
week_start = {}
week_end = {}

[poststrat]
hospital = "poststrat_hospital.csv"
community = "poststrat_community.csv"

[sampler]
seed = {seed}
"#,
        weeks.first(),
        weeks.last(),
    );
    std::fs::write(out.join("config.toml"), config_text)
        .map_err(|e| Error::io(out.join("config.toml").display().to_string(), e))?;

    println!(
        "wrote synthetic scenario ({} records, weeks {}) to {}",
        records.len(),
        weeks,
        out.display()
    );
    Ok(())
}

/// Reads a series file in either supported format, returning one entry per
/// contained series.
fn read_series_any(path: &Path) -> Result<Vec<MetricSeries>> {
    ensure_exists(path)?;
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let header = text.lines().next().unwrap_or("").trim();
    if header == PREVALENCE_CSV_HEADER {
        let series = poststrat::read_prevalence_csv(path)?;
        Ok(series.iter().map(|s| s.mean_series()).collect())
    } else if header == METRIC_CSV_HEADER {
        series::read_metric_csv(path)
    } else {
        Err(Error::BadHeader {
            path: path.display().to_string(),
            expected: format!("{PREVALENCE_CSV_HEADER} or {METRIC_CSV_HEADER}"),
            found: header.into(),
        })
    }
}

fn cmd_compare(series_paths: &[PathBuf], max_lag: usize, window: usize, out: &Path) -> Result<()> {
    let mut all: Vec<MetricSeries> = Vec::new();
    for path in series_paths {
        all.extend(read_series_any(path)?);
    }
    if all.len() < 2 {
        return Err(Error::TooFew { needed: 2, got: all.len(), what: "series to compare" });
    }
    create_out_dir(out)?;

    let mut summary = String::new();
    let mut peaks_csv = String::from("series,peak_week\n");
    summary.push_str(&format!("peak weeks (smoothing window {window}):\n"));
    for s in &all {
        let peak = metrics::peak_week(s, window)?;
        peaks_csv.push_str(&format!("{},{}\n", s.name, peak));
        summary.push_str(&format!("  {:<28} week {}\n", s.name, peak));
    }

    let mut lag_csv = String::from("series_a,series_b,lag,correlation,best\n");
    summary.push_str(&format!("\nlead-lag (max lag {max_lag}, first differences):\n"));
    for i in 0..all.len() {
        for j in (i + 1)..all.len() {
            let result = metrics::lead_lag(&all[i], &all[j], max_lag)?;
            for (lag, r) in &result.profile {
                let best = if *lag == result.best_lag { 1 } else { 0 };
                lag_csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    all[i].name, all[j].name, lag, r, best
                ));
            }
            summary.push_str(&format!(
                "  {:<28} vs {:<28} best lag {:+} (r = {:.3})\n",
                all[i].name, all[j].name, result.best_lag, result.best_correlation
            ));
        }
    }

    std::fs::write(out.join("peaks.csv"), peaks_csv)
        .map_err(|e| Error::io(out.join("peaks.csv").display().to_string(), e))?;
    std::fs::write(out.join("lead_lag.csv"), lag_csv)
        .map_err(|e| Error::io(out.join("lead_lag.csv").display().to_string(), e))?;
    std::fs::write(out.join("compare_summary.txt"), &summary)
        .map_err(|e| Error::io(out.join("compare_summary.txt").display().to_string(), e))?;
    print!("{summary}");
    println!("wrote comparison report to {}", out.display());
    Ok(())
}

fn cmd_sweep(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let config = load_run_config(config_path, seed, out)?;
    let records_path = config.records_path()?;
    let calibration_path = config.calibration_path()?;
    ensure_exists(records_path)?;
    ensure_exists(calibration_path)?;
    let records = ingest::load_records(records_path, &config.weeks)?;
    let calibration = ingest::load_calibration(calibration_path)?;
    let counts = aggregate_records(&records, &config.weeks)?;

    let mut tables = Vec::new();
    for (name, path) in &config.poststrat {
        ensure_exists(path)?;
        tables.push(ingest::load_poststrat(path, name)?);
    }
    if tables.is_empty() {
        return Err(Error::InvalidConfig("config lists no poststratification tables".into()));
    }
    let table_refs: Vec<&crate::data::PoststratTable> = tables.iter().collect();

    create_out_dir(&config.out_dir)?;
    let fits = metrics::sensitivity_sweep(
        &counts,
        &calibration,
        &table_refs,
        &ModelConfig::new(config.weeks),
        &config.sampler,
        &config.sweep_sensitivities,
    )?;
    for fit in &fits {
        let name = format!("sweep_s{:.2}.csv", fit.sensitivity_center);
        let path = config.out_dir.join(&name);
        let refs: Vec<&PrevalenceSeries> = fit.series.iter().collect();
        poststrat::write_prevalence_csv(&path, &refs)?;
        let mean_of_means: f64 = fit
            .series
            .first()
            .map(|s| crate::stats::mean(&s.mean))
            .unwrap_or(f64::NAN);
        println!(
            "sensitivity {:.2}: wrote {} (mean prevalence {:.4})",
            fit.sensitivity_center,
            path.display(),
            mean_of_means,
        );
    }
    Ok(())
}
