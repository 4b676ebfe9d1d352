//! Validated ingestion of external data: test records, poststratification
//! tables, calibration trials, and the declarative run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use crate::data::{
    AgeGroup, CalibrationData, County, Demographics, PoststratTable, Race, Sex, TestRecord,
    WeekRange, allowed_levels,
};
use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;

pub const RECORDS_CSV_HEADER: &str = "week,sex,age_group,race,county,result";
pub const POSTSTRAT_CSV_HEADER: &str = "sex,age_group,race,county,count";
pub const CALIBRATION_CSV_HEADER: &str = "kind,y,n";

fn read_lines(path: &Path, expected_header: &str) -> Result<Vec<(usize, String)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim().eq_ignore_ascii_case(expected_header) => {}
        other => {
            return Err(Error::BadHeader {
                path: path.display().to_string(),
                expected: expected_header.into(),
                found: other.map(|(_, h)| h.to_string()).unwrap_or_default(),
            });
        }
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn parse_demographics(row: usize, fields: &[&str]) -> Result<Demographics> {
    let sex = Sex::parse(fields[0]).ok_or_else(|| Error::UnknownLevel {
        row,
        field: "sex",
        value: fields[0].trim().into(),
        allowed: allowed_levels(Sex::LEVELS, Sex::label),
    })?;
    let age_group = AgeGroup::parse(fields[1]).ok_or_else(|| Error::UnknownLevel {
        row,
        field: "age_group",
        value: fields[1].trim().into(),
        allowed: allowed_levels(AgeGroup::LEVELS, AgeGroup::label),
    })?;
    let race = Race::parse(fields[2]).ok_or_else(|| Error::UnknownLevel {
        row,
        field: "race",
        value: fields[2].trim().into(),
        allowed: allowed_levels(Race::LEVELS, Race::label),
    })?;
    let county = County::parse(fields[3]).ok_or_else(|| Error::UnknownLevel {
        row,
        field: "county",
        value: fields[3].trim().into(),
        allowed: allowed_levels(County::LEVELS, County::label),
    })?;
    Ok(Demographics { sex, age_group, race, county })
}

/// Loads and validates person-level test records. Week indices must fall in
/// `weeks`; unknown categorical levels are rejected with the offending row.
pub fn load_records(path: &Path, weeks: &WeekRange) -> Result<Vec<TestRecord>> {
    let mut records = Vec::new();
    for (row, line) in read_lines(path, RECORDS_CSV_HEADER)? {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::MalformedRow {
                row,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let week: i32 = fields[0].trim().parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("week {:?} is not an integer", fields[0].trim()),
        })?;
        if !weeks.contains(week) {
            return Err(Error::WeekOutOfRange {
                row,
                week,
                first: weeks.first(),
                last: weeks.last(),
            });
        }
        let demographics = parse_demographics(row, &fields[1..5])?;
        let positive = match fields[5].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::MalformedRow {
                    row,
                    message: format!("result must be 0 or 1, got {other:?}"),
                });
            }
        };
        records.push(TestRecord { week, demographics, positive });
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[TestRecord]) -> Result<()> {
    let mut out = String::from(RECORDS_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.week,
            r.demographics.sex.label(),
            r.demographics.age_group.label(),
            r.demographics.race.label(),
            r.demographics.county.label(),
            u8::from(r.positive),
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads a 60-cell poststratification table. Every cell must appear exactly
/// once (zero counts are legal); missing or duplicate cells are errors.
pub fn load_poststrat(path: &Path, name: &str) -> Result<PoststratTable> {
    let mut counts: BTreeMap<Demographics, u64> = BTreeMap::new();
    for (row, line) in read_lines(path, POSTSTRAT_CSV_HEADER)? {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::MalformedRow {
                row,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let cell = parse_demographics(row, &fields[0..4])?;
        let count: u64 = fields[4].trim().parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("count {:?} is not a nonnegative integer", fields[4].trim()),
        })?;
        if counts.insert(cell, count).is_some() {
            return Err(Error::DuplicateCell { name: name.into(), cell: cell.to_string(), row });
        }
    }
    PoststratTable::from_map(name, &counts)
}

pub fn write_poststrat(path: &Path, table: &PoststratTable) -> Result<()> {
    let mut out = String::from(POSTSTRAT_CSV_HEADER);
    out.push('\n');
    for cell in Demographics::all_cells() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.sex.label(),
            cell.age_group.label(),
            cell.race.label(),
            cell.county.label(),
            table.count(&cell),
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads calibration trials; `kind` must be `sensitivity` or `specificity`
/// and y must not exceed n.
pub fn load_calibration(path: &Path) -> Result<CalibrationData> {
    let mut sensitivity = Vec::new();
    let mut specificity = Vec::new();
    for (row, line) in read_lines(path, CALIBRATION_CSV_HEADER)? {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedRow {
                row,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let y: u64 = fields[1].trim().parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("y {:?} is not a nonnegative integer", fields[1].trim()),
        })?;
        let n: u64 = fields[2].trim().parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("n {:?} is not a nonnegative integer", fields[2].trim()),
        })?;
        if y > n {
            return Err(Error::MalformedRow {
                row,
                message: format!("successes {y} exceed trials {n}"),
            });
        }
        match fields[0].trim().to_ascii_lowercase().as_str() {
            "sensitivity" => sensitivity.push((y, n)),
            "specificity" => specificity.push((y, n)),
            other => {
                return Err(Error::UnknownLevel {
                    row,
                    field: "kind",
                    value: other.into(),
                    allowed: "sensitivity, specificity".into(),
                });
            }
        }
    }
    CalibrationData::new(sensitivity, specificity)
}

pub fn write_calibration(path: &Path, calibration: &CalibrationData) -> Result<()> {
    let mut out = String::from(CALIBRATION_CSV_HEADER);
    out.push('\n');
    for &(y, n) in &calibration.sensitivity_trials {
        out.push_str(&format!("sensitivity,{y},{n}\n"));
    }
    for &(y, n) in &calibration.specificity_trials {
        out.push_str(&format!("specificity,{y},{n}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Week index of a calendar date: weeks advance every seven days from
/// `anchor_date`, which begins week `anchor_week`. Dates before the anchor
/// map to earlier indices.
pub fn week_of_date(date: NaiveDate, anchor_week: i32, anchor_date: NaiveDate) -> i32 {
    let days = (date - anchor_date).num_days();
    anchor_week + days.div_euclid(7) as i32
}

pub const DEFAULT_ANCHOR_WEEK: i32 = 18;

/// Monday of the default week 18 (the week containing 2020-04-28).
pub fn default_anchor_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 4, 27).unwrap()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    records: Option<String>,
    calibration: Option<String>,
    #[serde(default)]
    poststrat: BTreeMap<String, String>,
    out_dir: Option<String>,
    week_start: Option<i32>,
    week_end: Option<i32>,
    sweep_sensitivities: Option<Vec<f64>>,
    anchor_week: Option<i32>,
    anchor_date: Option<NaiveDate>,
    #[serde(default)]
    sampler: RawSamplerConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSamplerConfig {
    chains: Option<usize>,
    warmup_iterations: Option<usize>,
    sampling_iterations: Option<usize>,
    seed: Option<u64>,
    target_acceptance: Option<f64>,
    max_step_depth: Option<usize>,
}

/// Fully resolved run configuration. Paths are resolved relative to the
/// config file's directory.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub records: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub poststrat: BTreeMap<String, PathBuf>,
    pub out_dir: PathBuf,
    pub weeks: WeekRange,
    pub sweep_sensitivities: Vec<f64>,
    pub anchor_week: i32,
    pub anchor_date: NaiveDate,
    pub sampler: SamplerConfig,
}

pub const DEFAULT_SWEEP: [f64; 4] = [0.70, 0.65, 0.60, 0.55];

/// Parses a TOML run configuration. Unknown keys are rejected.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| Error::ConfigParse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &String| -> PathBuf {
        let pb = PathBuf::from(p);
        if pb.is_absolute() { pb } else { base.join(pb) }
    };

    let weeks = WeekRange::new(raw.week_start.unwrap_or(18), raw.week_end.unwrap_or(60))?;
    let sweep = raw.sweep_sensitivities.unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
    for &s in &sweep {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sweep_sensitivities entry {s} outside (0, 1]"
            )));
        }
    }

    let defaults = SamplerConfig::default();
    let sampler = SamplerConfig {
        chains: raw.sampler.chains.unwrap_or(defaults.chains),
        warmup_iterations: raw.sampler.warmup_iterations.unwrap_or(defaults.warmup_iterations),
        sampling_iterations: raw
            .sampler
            .sampling_iterations
            .unwrap_or(defaults.sampling_iterations),
        seed: raw.sampler.seed.unwrap_or(defaults.seed),
        target_acceptance: raw.sampler.target_acceptance.unwrap_or(defaults.target_acceptance),
        max_step_depth: raw.sampler.max_step_depth.unwrap_or(defaults.max_step_depth),
    };
    sampler.validate()?;

    Ok(RunConfig {
        records: raw.records.as_ref().map(resolve),
        calibration: raw.calibration.as_ref().map(resolve),
        poststrat: raw.poststrat.iter().map(|(k, v)| (k.clone(), resolve(v))).collect(),
        out_dir: raw.out_dir.as_ref().map(resolve).unwrap_or_else(|| base.join("out")),
        weeks,
        sweep_sensitivities: sweep,
        anchor_week: raw.anchor_week.unwrap_or(DEFAULT_ANCHOR_WEEK),
        anchor_date: raw.anchor_date.unwrap_or_else(default_anchor_date),
        sampler,
    })
}

impl RunConfig {
    pub fn records_path(&self) -> Result<&Path> {
        self.records
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("config is missing the `records` path".into()))
    }

    pub fn calibration_path(&self) -> Result<&Path> {
        self.calibration
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("config is missing the `calibration` path".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weeks() -> WeekRange {
        WeekRange::new(18, 60).unwrap()
    }

    #[test]
    fn record_row_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, "week,sex,age_group,race,county,result\n18,female,35-64,white,Lake,0\n").unwrap();
        let records = load_records(&path, &weeks()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].week, 18);
        assert_eq!(records[0].demographics.sex, Sex::Female);
        assert!(!records[0].positive);
    }

    #[test]
    fn unknown_age_level_names_allowed_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, "week,sex,age_group,race,county,result\n18,female,90+,white,Lake,0\n").unwrap();
        let err = load_records(&path, &weeks()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("90+") && msg.contains("75+"), "{msg}");
        assert!(msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn records_roundtrip_preserves_data() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = crate::synth::bundled_scenario();
        let mut records = scenario.records(3);
        records.truncate(500);
        let path = dir.path().join("rt.csv");
        write_records(&path, &records).unwrap();
        let read = load_records(&path, &weeks()).unwrap();
        assert_eq!(read, records);
    }

    #[test]
    fn poststrat_requires_all_60_cells() {
        let dir = tempfile::tempdir().unwrap();
        let table = crate::synth::hospital_table();
        let path = dir.path().join("p.csv");
        write_poststrat(&path, &table).unwrap();
        let loaded = load_poststrat(&path, "hospital").unwrap();
        assert_eq!(loaded.total(), table.total());

        // drop one row
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let dropped = lines.remove(7);
        let short = dir.path().join("short.csv");
        std::fs::write(&short, lines.join("\n")).unwrap();
        let err = load_poststrat(&short, "hospital").unwrap_err();
        let cell_name = dropped.split(',').take(4).collect::<Vec<_>>().join("/");
        assert!(err.to_string().contains(&cell_name), "{err} missing {cell_name}");

        // duplicate a row
        let dup_line = text.lines().nth(3).unwrap();
        let dup = dir.path().join("dup.csv");
        std::fs::write(&dup, format!("{text}{dup_line}\n")).unwrap();
        assert!(matches!(load_poststrat(&dup, "hospital"), Err(Error::DuplicateCell { .. })));
    }

    #[test]
    fn calibration_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.csv");
        write_calibration(&path, &CalibrationData::default_priors()).unwrap();
        let cal = load_calibration(&path).unwrap();
        assert_eq!(cal, CalibrationData::default_priors());

        std::fs::write(&path, "kind,y,n\nsensitivity,0,0\n").unwrap();
        assert!(load_calibration(&path).is_ok());

        std::fs::write(&path, "kind,y,n\nsensitivity,5,3\n").unwrap();
        let err = load_calibration(&path).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn week_of_date_follows_anchor() {
        let anchor = default_anchor_date();
        assert_eq!(week_of_date(anchor, 18, anchor), 18);
        let study_start = NaiveDate::from_ymd_opt(2020, 4, 28).unwrap();
        assert_eq!(week_of_date(study_start, 18, anchor), 18);
        let in_week = NaiveDate::from_ymd_opt(2020, 5, 3).unwrap();
        assert_eq!(week_of_date(in_week, 18, anchor), 18);
        let next = NaiveDate::from_ymd_opt(2020, 5, 4).unwrap();
        assert_eq!(week_of_date(next, 18, anchor), 19);
        let winter = NaiveDate::from_ymd_opt(2021, 2, 8).unwrap();
        assert_eq!(week_of_date(winter, 18, anchor), 59);
        let before = NaiveDate::from_ymd_opt(2020, 4, 26).unwrap();
        assert_eq!(week_of_date(before, 18, anchor), 17);
    }

    #[test]
    fn config_parses_with_defaults_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(
            &path,
            r#"
records = "records.csv"
calibration = "cal.csv"

[poststrat]
hospital = "hosp.csv"
community = "comm.csv"

[sampler]
chains = 2
seed = 99
"#,
        )
        .unwrap();
        let config = load_config(&path).unwrap();
        assert_eq!(config.weeks, WeekRange::new(18, 60).unwrap());
        assert_eq!(config.sweep_sensitivities, DEFAULT_SWEEP.to_vec());
        assert_eq!(config.sampler.chains, 2);
        assert_eq!(config.sampler.seed, 99);
        assert_eq!(config.sampler.warmup_iterations, 1000);
        assert_eq!(config.records.unwrap(), dir.path().join("records.csv"));
        assert_eq!(config.poststrat["hospital"], dir.path().join("hosp.csv"));

        std::fs::write(&path, "records = \"r.csv\"\nmystery_knob = 3\n").unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("mystery_knob"), "{err}");
    }
}
