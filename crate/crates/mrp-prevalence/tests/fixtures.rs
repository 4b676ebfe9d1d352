//! The bundled data fixtures under `data/` must stay in sync with the
//! generators that produced them. Run with REGEN_FIXTURES=1 to rewrite.

use std::path::PathBuf;

use mrp_prevalence::data::{CalibrationData, Demographics, Sex, WeekRange, NUM_CELLS};
use mrp_prevalence::ingest;
use mrp_prevalence::poststrat::{describe_records, describe_table};
use mrp_prevalence::synth::{self, bundled_scenario, Design};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn regen() -> bool {
    std::env::var("REGEN_FIXTURES").is_ok()
}

/// A single week of records at the scale of the first study week: 95 tests,
/// 47 male and 48 female, outcomes drawn from the bundled truth.
fn week18_records() -> Vec<mrp_prevalence::TestRecord> {
    let scenario = bundled_scenario();
    let weeks = WeekRange::new(18, 18).unwrap();
    let truth = mrp_prevalence::ParameterDraw {
        alpha_time: vec![scenario.truth.alpha_time[0]],
        weeks,
        ..scenario.truth.clone()
    };
    // allocate 47 male / 48 female tests over each sex's cells
    let mut male_weights = [0.0f64; NUM_CELLS];
    let mut female_weights = [0.0f64; NUM_CELLS];
    for cell in Demographics::all_cells() {
        let w = scenario.design.cell_tests[10][cell.cell_index()] as f64 + 0.1;
        match cell.sex {
            Sex::Male => male_weights[cell.cell_index()] = w,
            Sex::Female => female_weights[cell.cell_index()] = w,
        }
    }
    let males = synth::largest_remainder(47, &male_weights);
    let females = synth::largest_remainder(48, &female_weights);
    let mut cells = [0u64; NUM_CELLS];
    for i in 0..NUM_CELLS {
        cells[i] = males[i] + females[i];
    }
    let design = Design::new(weeks, vec![cells]).unwrap();
    synth::generate(&truth, &design, 118).unwrap()
}

#[test]
fn bundled_fixtures_match_generators() {
    let dir = data_dir();
    if regen() {
        std::fs::create_dir_all(&dir).unwrap();
        ingest::write_calibration(&dir.join("calibration_default.csv"), &CalibrationData::default_priors()).unwrap();
        ingest::write_poststrat(&dir.join("poststrat_hospital.csv"), &synth::hospital_table()).unwrap();
        ingest::write_poststrat(&dir.join("poststrat_community.csv"), &synth::community_table()).unwrap();
        ingest::write_records(&dir.join("records_week18.csv"), &week18_records()).unwrap();
    }

    let cal = ingest::load_calibration(&dir.join("calibration_default.csv")).unwrap();
    assert_eq!(cal, CalibrationData::default_priors());

    let hospital = ingest::load_poststrat(&dir.join("poststrat_hospital.csv"), "hospital").unwrap();
    assert_eq!(hospital, synth::hospital_table());

    let community =
        ingest::load_poststrat(&dir.join("poststrat_community.csv"), "community").unwrap();
    assert_eq!(community, synth::community_table());

    let weeks = WeekRange::new(18, 18).unwrap();
    let records = ingest::load_records(&dir.join("records_week18.csv"), &weeks).unwrap();
    assert_eq!(records, week18_records());
}

#[test]
fn bundled_calibration_has_reference_trial_counts() {
    let cal = ingest::load_calibration(&data_dir().join("calibration_default.csv")).unwrap();
    assert_eq!(cal.sensitivity_trials, vec![(70, 100), (78, 85), (27, 37), (25, 35)]);
    assert_eq!(cal.specificity_trials.len(), 14);
    assert_eq!(cal.specificity_trials[0], (0, 0));
    assert_eq!(cal.specificity_trials[4], (1102, 1102));
}

#[test]
fn bundled_tables_have_reference_totals() {
    let hospital =
        ingest::load_poststrat(&data_dir().join("poststrat_hospital.csv"), "hospital").unwrap();
    assert_eq!(hospital.total(), 35_838);
    assert_eq!(describe_table(&hospital).unwrap().size, 35_838);

    let community =
        ingest::load_poststrat(&data_dir().join("poststrat_community.csv"), "community").unwrap();
    assert_eq!(community.total(), 654_890);
    let summary = describe_table(&community).unwrap();
    assert_eq!(summary.size, 654_890);
    assert!((summary.sex_pct[0] - 51.0).abs() < 1.0);
}

#[test]
fn week18_fixture_loads_95_records() {
    let weeks = WeekRange::new(18, 60).unwrap();
    let records =
        ingest::load_records(&data_dir().join("records_week18.csv"), &weeks).unwrap();
    assert_eq!(records.len(), 95);
    assert!(records.iter().all(|r| r.week == 18));
    let summary = describe_records("week 18", &records).unwrap();
    let males = records.iter().filter(|r| r.demographics.sex == Sex::Male).count();
    assert_eq!(males, 47);
    assert_eq!(summary.size, 95);
}
