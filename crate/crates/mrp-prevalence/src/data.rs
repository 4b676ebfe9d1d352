//! Domain types: demographic cells, test records, poststratification tables,
//! and test-calibration data.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of cells in the sex x age x race x county cross-tabulation.
pub const NUM_CELLS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub const LEVELS: [Sex; 2] = [Sex::Female, Sex::Male];

    pub fn label(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Effect coding used by the regression: +0.5 for men, -0.5 for women.
    pub fn male_coded(self) -> f64 {
        match self {
            Sex::Female => -0.5,
            Sex::Male => 0.5,
        }
    }

    pub fn parse(s: &str) -> Option<Sex> {
        Self::LEVELS
            .into_iter()
            .find(|l| l.label().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    Age0To17,
    Age18To34,
    Age35To64,
    Age65To74,
    Age75Plus,
}

impl AgeGroup {
    pub const LEVELS: [AgeGroup; 5] = [
        AgeGroup::Age0To17,
        AgeGroup::Age18To34,
        AgeGroup::Age35To64,
        AgeGroup::Age65To74,
        AgeGroup::Age75Plus,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::Age0To17 => "0-17",
            AgeGroup::Age18To34 => "18-34",
            AgeGroup::Age35To64 => "35-64",
            AgeGroup::Age65To74 => "65-74",
            AgeGroup::Age75Plus => "75+",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<AgeGroup> {
        Self::LEVELS
            .into_iter()
            .find(|l| l.label().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    Other,
}

impl Race {
    pub const LEVELS: [Race; 3] = [Race::White, Race::Black, Race::Other];

    pub fn label(self) -> &'static str {
        match self {
            Race::White => "white",
            Race::Black => "black",
            Race::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Race> {
        Self::LEVELS
            .into_iter()
            .find(|l| l.label().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum County {
    Lake,
    Porter,
}

impl County {
    pub const LEVELS: [County; 2] = [County::Lake, County::Porter];

    pub fn label(self) -> &'static str {
        match self {
            County::Lake => "Lake",
            County::Porter => "Porter",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<County> {
        Self::LEVELS
            .into_iter()
            .find(|l| l.label().eq_ignore_ascii_case(s.trim()))
    }
}

pub fn allowed_levels<T: Copy, const N: usize>(levels: [T; N], label: fn(T) -> &'static str) -> String {
    levels.map(label).join(", ")
}

/// One cell of the demographic cross-tabulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Demographics {
    pub sex: Sex,
    pub age_group: AgeGroup,
    pub race: Race,
    pub county: County,
}

impl Demographics {
    pub fn new(sex: Sex, age_group: AgeGroup, race: Race, county: County) -> Self {
        Demographics {
            sex,
            age_group,
            race,
            county,
        }
    }

    /// Canonical cell index in 0..60: nested (sex, age, race, county) order.
    pub fn cell_index(&self) -> usize {
        ((self.sex.index() * AgeGroup::LEVELS.len() + self.age_group.index())
            * Race::LEVELS.len()
            + self.race.index())
            * County::LEVELS.len()
            + self.county.index()
    }

    pub fn from_cell_index(index: usize) -> Option<Demographics> {
        if index >= NUM_CELLS {
            return None;
        }
        let county = County::LEVELS[index % 2];
        let rest = index / 2;
        let race = Race::LEVELS[rest % 3];
        let rest = rest / 3;
        let age_group = AgeGroup::LEVELS[rest % 5];
        let sex = Sex::LEVELS[rest / 5];
        Some(Demographics {
            sex,
            age_group,
            race,
            county,
        })
    }

    /// All 60 cells in canonical index order.
    pub fn all_cells() -> impl Iterator<Item = Demographics> {
        (0..NUM_CELLS).map(|i| Demographics::from_cell_index(i).unwrap())
    }
}

impl fmt::Display for Demographics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.sex.label(),
            self.age_group.label(),
            self.race.label(),
            self.county.label()
        )
    }
}

/// One person-level test result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRecord {
    pub week: i32,
    pub demographics: Demographics,
    /// true = positive result
    pub positive: bool,
}

/// Inclusive range of study weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekRange {
    first: i32,
    last: i32,
}

impl WeekRange {
    pub fn new(first: i32, last: i32) -> Result<WeekRange> {
        if first > last {
            return Err(Error::InvalidWeekRange { first, last });
        }
        Ok(WeekRange { first, last })
    }

    pub fn first(&self) -> i32 {
        self.first
    }

    pub fn last(&self) -> i32 {
        self.last
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, week: i32) -> bool {
        week >= self.first && week <= self.last
    }

    /// Offset of `week` within the range, if covered.
    pub fn offset(&self, week: i32) -> Option<usize> {
        if self.contains(week) {
            Some((week - self.first) as usize)
        } else {
            None
        }
    }

    pub fn week_at(&self, offset: usize) -> i32 {
        self.first + offset as i32
    }

    pub fn iter(&self) -> impl Iterator<Item = i32> {
        self.first..=self.last
    }
}

impl fmt::Display for WeekRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={}", self.first, self.last)
    }
}

/// Population counts over the 60 demographic cells for one target population.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoststratTable {
    name: String,
    counts: Vec<u64>,
}

impl PoststratTable {
    pub fn new(name: impl Into<String>, counts: [u64; NUM_CELLS]) -> Result<PoststratTable> {
        let name = name.into();
        if counts.iter().sum::<u64>() == 0 {
            return Err(Error::EmptyTable { name });
        }
        Ok(PoststratTable {
            name,
            counts: counts.to_vec(),
        })
    }

    /// Builds a table from a cell -> count map; every cell must be present
    /// (explicit zeros are legal).
    pub fn from_map(
        name: impl Into<String>,
        counts: &BTreeMap<Demographics, u64>,
    ) -> Result<PoststratTable> {
        let name = name.into();
        let missing: Vec<String> = Demographics::all_cells()
            .filter(|c| !counts.contains_key(c))
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingCells {
                name,
                missing: missing.join(", "),
            });
        }
        let mut arr = [0u64; NUM_CELLS];
        for (cell, n) in counts {
            arr[cell.cell_index()] = *n;
        }
        PoststratTable::new(name, arr)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn count(&self, cell: &Demographics) -> u64 {
        self.counts[cell.cell_index()]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn with_name(&self, name: impl Into<String>) -> PoststratTable {
        PoststratTable {
            name: name.into(),
            counts: self.counts.clone(),
        }
    }
}

/// (successes, trials) pairs informing test sensitivity and specificity.
///
/// Specificity pairs count negative results among known-negative subjects;
/// sensitivity pairs count positive results among known-positive subjects.
/// Pairs with zero trials are legal and contribute nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationData {
    pub sensitivity_trials: Vec<(u64, u64)>,
    pub specificity_trials: Vec<(u64, u64)>,
}

impl CalibrationData {
    pub fn new(
        sensitivity_trials: Vec<(u64, u64)>,
        specificity_trials: Vec<(u64, u64)>,
    ) -> Result<CalibrationData> {
        for &(y, n) in sensitivity_trials.iter().chain(&specificity_trials) {
            if y > n {
                return Err(Error::InvalidConfig(format!(
                    "calibration pair {y}/{n} has more successes than trials"
                )));
            }
        }
        Ok(CalibrationData {
            sensitivity_trials,
            specificity_trials,
        })
    }

    pub fn empty() -> CalibrationData {
        CalibrationData {
            sensitivity_trials: Vec::new(),
            specificity_trials: Vec::new(),
        }
    }

    /// Default prior datasets bundled with the crate: four sensitivity
    /// trials and fourteen specificity trials from previous test-performance
    /// studies.
    pub fn default_priors() -> CalibrationData {
        CalibrationData {
            sensitivity_trials: vec![(70, 100), (78, 85), (27, 37), (25, 35)],
            specificity_trials: vec![
                (0, 0),
                (368, 371),
                (30, 30),
                (70, 70),
                (1102, 1102),
                (300, 300),
                (311, 311),
                (500, 500),
                (198, 200),
                (99, 99),
                (29, 31),
                (146, 150),
                (105, 108),
                (50, 52),
            ],
        }
    }

    /// Replaces the sensitivity trials with a single pair centered at `s`,
    /// keeping the specificity trials; used by prior-sensitivity sweeps.
    pub fn with_sensitivity_center(&self, s: f64) -> CalibrationData {
        CalibrationData {
            sensitivity_trials: vec![((100.0 * s).round() as u64, 100)],
            specificity_trials: self.specificity_trials.clone(),
        }
    }
}

/// Aggregated test counts for one (cell, week).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellWeekCounts {
    pub week: i32,
    pub cell: Demographics,
    pub tests: u64,
    pub positives: u64,
}

/// Aggregates person-level records to (cell, week) binomial counts in
/// canonical (week, cell) order. Weeks outside `weeks` are rejected.
pub fn aggregate_records(records: &[TestRecord], weeks: &WeekRange) -> Result<Vec<CellWeekCounts>> {
    let mut counts: BTreeMap<(i32, usize), (u64, u64)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if !weeks.contains(r.week) {
            return Err(Error::WeekOutOfRange {
                row: i + 1,
                week: r.week,
                first: weeks.first(),
                last: weeks.last(),
            });
        }
        let entry = counts.entry((r.week, r.demographics.cell_index())).or_insert((0, 0));
        entry.0 += 1;
        if r.positive {
            entry.1 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|((week, cell_index), (tests, positives))| CellWeekCounts {
            week,
            cell: Demographics::from_cell_index(cell_index).unwrap(),
            tests,
            positives,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_index_roundtrip_covers_all_60() {
        let mut seen = vec![false; NUM_CELLS];
        for cell in Demographics::all_cells() {
            let idx = cell.cell_index();
            assert!(!seen[idx], "duplicate index {idx}");
            seen[idx] = true;
            assert_eq!(Demographics::from_cell_index(idx), Some(cell));
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn level_parsing_is_case_insensitive() {
        assert_eq!(Sex::parse(" FEMALE "), Some(Sex::Female));
        assert_eq!(AgeGroup::parse("35-64"), Some(AgeGroup::Age35To64));
        assert_eq!(Race::parse("White"), Some(Race::White));
        assert_eq!(County::parse("lake"), Some(County::Lake));
        assert_eq!(AgeGroup::parse("90+"), None);
    }

    #[test]
    fn week_range_offsets() {
        let weeks = WeekRange::new(18, 60).unwrap();
        assert_eq!(weeks.len(), 43);
        assert_eq!(weeks.offset(18), Some(0));
        assert_eq!(weeks.offset(60), Some(42));
        assert_eq!(weeks.offset(61), None);
        assert!(WeekRange::new(5, 4).is_err());
    }

    #[test]
    fn aggregation_is_order_invariant() {
        let weeks = WeekRange::new(18, 20).unwrap();
        let cell = Demographics::from_cell_index(7).unwrap();
        let other = Demographics::from_cell_index(41).unwrap();
        let mut records = vec![
            TestRecord { week: 19, demographics: cell, positive: true },
            TestRecord { week: 18, demographics: other, positive: false },
            TestRecord { week: 19, demographics: cell, positive: false },
            TestRecord { week: 19, demographics: cell, positive: false },
        ];
        let a = aggregate_records(&records, &weeks).unwrap();
        records.reverse();
        let b = aggregate_records(&records, &weeks).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].tests, 3);
        assert_eq!(a[1].positives, 1);
    }

    #[test]
    fn aggregation_rejects_out_of_range_weeks() {
        let weeks = WeekRange::new(18, 20).unwrap();
        let cell = Demographics::from_cell_index(0).unwrap();
        let records = vec![TestRecord { week: 25, demographics: cell, positive: false }];
        let err = aggregate_records(&records, &weeks).unwrap_err();
        assert!(err.to_string().contains("25"));
    }

    #[test]
    fn calibration_rejects_y_above_n() {
        assert!(CalibrationData::new(vec![(5, 3)], vec![]).is_err());
        assert!(CalibrationData::new(vec![(0, 0)], vec![]).is_ok());
    }

    #[test]
    fn default_priors_match_reference_counts() {
        let cal = CalibrationData::default_priors();
        assert_eq!(cal.sensitivity_trials.len(), 4);
        assert_eq!(cal.specificity_trials.len(), 14);
        let sens_total: u64 = cal.sensitivity_trials.iter().map(|&(_, n)| n).sum();
        assert_eq!(sens_total, 257);
    }
}
