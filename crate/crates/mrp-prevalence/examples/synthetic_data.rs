//! Generate the bundled synthetic scenario to CSV files and print the
//! descriptive summaries of the sample and both target populations.
//!
//!     cargo run --release --example synthetic_data -- /tmp/mrp-demo

use mrp_prevalence::ingest;
use mrp_prevalence::poststrat::{describe_records, describe_table};
use mrp_prevalence::synth::bundled_scenario;

fn main() -> mrp_prevalence::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "/tmp/mrp-demo".to_string());
    let out = std::path::PathBuf::from(out);
    std::fs::create_dir_all(&out).expect("create output directory");

    let scenario = bundled_scenario();
    let records = scenario.records(20200428);

    ingest::write_records(&out.join("records.csv"), &records)?;
    ingest::write_poststrat(&out.join("poststrat_hospital.csv"), &scenario.hospital)?;
    ingest::write_poststrat(&out.join("poststrat_community.csv"), &scenario.community)?;
    ingest::write_calibration(&out.join("calibration.csv"), &scenario.calibration)?;
    println!("wrote scenario CSVs to {}\n", out.display());

    println!("{}", describe_records("Synthetic sample", &records)?);
    println!("{}", describe_table(&scenario.hospital)?);
    println!("{}", describe_table(&scenario.community)?);
    Ok(())
}
