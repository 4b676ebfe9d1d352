//! Poststratification of posterior draws to target populations, raw weekly
//! positivity, and descriptive summaries.

use std::fmt;
use std::path::Path;

use crate::data::{
    AgeGroup, County, Demographics, PoststratTable, Race, Sex, TestRecord, WeekRange, NUM_CELLS,
};
use crate::error::{Error, Result};
use crate::model::inv_logit;
use crate::sampler::PosteriorDraws;
use crate::series::MetricSeries;
use crate::stats;

/// Weekly population-level prevalence: summaries over draws plus the
/// underlying per-week draw matrix for downstream comparisons.
#[derive(Debug, Clone)]
pub struct PrevalenceSeries {
    pub population: String,
    pub weeks: WeekRange,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub q025: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    pub q975: Vec<f64>,
    /// draw_matrix[week offset][draw index]; empty when read back from CSV.
    pub draw_matrix: Vec<Vec<f64>>,
}

impl PrevalenceSeries {
    /// Posterior-mean trajectory as a metric series named after the
    /// population.
    pub fn mean_series(&self) -> MetricSeries {
        MetricSeries::dense(self.population.clone(), self.weeks, self.mean.clone()).unwrap()
    }
}

/// True-incidence draws for one cell and week.
#[derive(Debug, Clone)]
pub struct CellWeekIncidence {
    pub week: i32,
    pub cell: Demographics,
    /// One value per posterior draw, each in [0, 1].
    pub pi_hat: Vec<f64>,
}

/// Per-draw true incidence for a single cell-week.
pub fn cell_incidence(
    draws: &PosteriorDraws,
    cell: &Demographics,
    week: i32,
) -> Result<CellWeekIncidence> {
    if draws.draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let pi_hat = draws
        .draws
        .iter()
        .map(|d| crate::model::true_incidence(d, cell, week))
        .collect::<Result<Vec<f64>>>()?;
    Ok(CellWeekIncidence { week, cell: *cell, pi_hat })
}

/// Weighted-average weekly prevalence over the table's population counts,
/// computed from true incidence (pi), not test positivity.
pub fn poststratify(
    draws: &PosteriorDraws,
    table: &PoststratTable,
    weeks: WeekRange,
) -> Result<PrevalenceSeries> {
    if draws.draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    for week in [weeks.first(), weeks.last()] {
        if !draws.weeks.contains(week) {
            return Err(Error::UnknownWeek {
                week,
                first: draws.weeks.first(),
                last: draws.weeks.last(),
            });
        }
    }
    let total = table.total() as f64;

    let cells: Vec<Demographics> = Demographics::all_cells().collect();
    let n_weeks = weeks.len();
    let mut draw_matrix = vec![Vec::with_capacity(draws.n_draws()); n_weeks];

    for draw in &draws.draws {
        // per-cell linear predictor without the week effect
        let mut base = [0.0f64; NUM_CELLS];
        for (i, cell) in cells.iter().enumerate() {
            let m = cell.sex.male_coded();
            base[i] = draw.beta1
                + draw.beta2 * m
                + draw.alpha_age[cell.age_group.index()]
                + draw.alpha_race[cell.race.index()]
                + draw.alpha_county[cell.county.index()]
                + draw.alpha_age_male[cell.age_group.index()] * m;
        }
        for (w_off, week) in weeks.iter().enumerate() {
            let time = draw.alpha_time[draw.weeks.offset(week).unwrap()];
            let mut acc = 0.0;
            for (i, _) in cells.iter().enumerate() {
                let n_j = table.counts()[i];
                if n_j == 0 {
                    continue;
                }
                acc += n_j as f64 * inv_logit(base[i] + time);
            }
            draw_matrix[w_off].push(acc / total);
        }
    }

    let mut series = PrevalenceSeries {
        population: table.name().to_string(),
        weeks,
        mean: Vec::with_capacity(n_weeks),
        sd: Vec::with_capacity(n_weeks),
        q025: Vec::with_capacity(n_weeks),
        q25: Vec::with_capacity(n_weeks),
        q75: Vec::with_capacity(n_weeks),
        q975: Vec::with_capacity(n_weeks),
        draw_matrix: Vec::new(),
    };
    for week_draws in &draw_matrix {
        // summaries are computed on the sorted draws so they are exactly
        // invariant to draw order
        let mut sorted = week_draws.clone();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        series.mean.push(stats::mean(&sorted));
        series.sd.push(stats::sample_sd(&sorted));
        series.q025.push(stats::quantile_sorted(&sorted, 0.025));
        series.q25.push(stats::quantile_sorted(&sorted, 0.25));
        series.q75.push(stats::quantile_sorted(&sorted, 0.75));
        series.q975.push(stats::quantile_sorted(&sorted, 0.975));
    }
    series.draw_matrix = draw_matrix;
    Ok(series)
}

/// Observed weekly positivity (positives / tests). Weeks without tests are
/// missing, not zero. Records outside `weeks` are ignored.
pub fn raw_weekly_positivity(records: &[TestRecord], weeks: WeekRange) -> MetricSeries {
    let (tests, positives) = weekly_counts(records, weeks);
    let values = tests
        .iter()
        .zip(&positives)
        .map(|(&n, &y)| if n > 0 { Some(y as f64 / n as f64) } else { None })
        .collect();
    MetricSeries { name: "positivity".into(), weeks, values }
}

/// Weekly counts of positive tests. Weeks without tests are missing.
pub fn weekly_positive_counts(records: &[TestRecord], weeks: WeekRange) -> MetricSeries {
    let (tests, positives) = weekly_counts(records, weeks);
    let values = tests
        .iter()
        .zip(&positives)
        .map(|(&n, &y)| if n > 0 { Some(y as f64) } else { None })
        .collect();
    MetricSeries { name: "positive_cases".into(), weeks, values }
}

fn weekly_counts(records: &[TestRecord], weeks: WeekRange) -> (Vec<u64>, Vec<u64>) {
    let mut tests = vec![0u64; weeks.len()];
    let mut positives = vec![0u64; weeks.len()];
    for r in records {
        if let Some(off) = weeks.offset(r.week) {
            tests[off] += 1;
            if r.positive {
                positives[off] += 1;
            }
        }
    }
    (tests, positives)
}

/// Size, raw prevalence, and marginal percentage breakdowns in the layout
/// of a descriptive summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptiveSummary {
    pub label: String,
    pub size: u64,
    /// Percent positive; `None` for population tables.
    pub prevalence_pct: Option<f64>,
    pub sex_pct: [f64; 2],
    pub age_pct: [f64; 5],
    pub race_pct: [f64; 3],
    pub county_pct: [f64; 2],
}

impl fmt::Display for DescriptiveSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.label)?;
        writeln!(f, "  Size           {}", self.size)?;
        match self.prevalence_pct {
            Some(p) => writeln!(f, "  Prevalence(%)  {p:.1}")?,
            None => writeln!(f, "  Prevalence(%)  NA")?,
        }
        for (s, pct) in Sex::LEVELS.iter().zip(self.sex_pct) {
            writeln!(f, "  {:<14} {pct:.0}", format!("{}(%)", s.label()))?;
        }
        for (a, pct) in AgeGroup::LEVELS.iter().zip(self.age_pct) {
            writeln!(f, "  {:<14} {pct:.0}", format!("Age{}(%)", a.label()))?;
        }
        for (r, pct) in Race::LEVELS.iter().zip(self.race_pct) {
            writeln!(f, "  {:<14} {pct:.0}", format!("{}(%)", r.label()))?;
        }
        for (c, pct) in County::LEVELS.iter().zip(self.county_pct) {
            writeln!(f, "  {:<14} {pct:.0}", format!("{}(%)", c.label()))?;
        }
        Ok(())
    }
}

/// Descriptive summary of person-level records.
pub fn describe_records(label: &str, records: &[TestRecord]) -> Result<DescriptiveSummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("test records"));
    }
    let size = records.len() as u64;
    let positives = records.iter().filter(|r| r.positive).count();
    let mut sex = [0u64; 2];
    let mut age = [0u64; 5];
    let mut race = [0u64; 3];
    let mut county = [0u64; 2];
    for r in records {
        sex[r.demographics.sex.index()] += 1;
        age[r.demographics.age_group.index()] += 1;
        race[r.demographics.race.index()] += 1;
        county[r.demographics.county.index()] += 1;
    }
    Ok(DescriptiveSummary {
        label: label.to_string(),
        size,
        prevalence_pct: Some(100.0 * positives as f64 / size as f64),
        sex_pct: sex.map(|n| 100.0 * n as f64 / size as f64),
        age_pct: age.map(|n| 100.0 * n as f64 / size as f64),
        race_pct: race.map(|n| 100.0 * n as f64 / size as f64),
        county_pct: county.map(|n| 100.0 * n as f64 / size as f64),
    })
}

/// Descriptive summary of a poststratification table.
pub fn describe_table(table: &PoststratTable) -> Result<DescriptiveSummary> {
    let size = table.total();
    if size == 0 {
        return Err(Error::EmptyInput("poststratification table"));
    }
    let mut sex = [0u64; 2];
    let mut age = [0u64; 5];
    let mut race = [0u64; 3];
    let mut county = [0u64; 2];
    for cell in Demographics::all_cells() {
        let n = table.count(&cell);
        sex[cell.sex.index()] += n;
        age[cell.age_group.index()] += n;
        race[cell.race.index()] += n;
        county[cell.county.index()] += n;
    }
    Ok(DescriptiveSummary {
        label: table.name().to_string(),
        size,
        prevalence_pct: None,
        sex_pct: sex.map(|n| 100.0 * n as f64 / size as f64),
        age_pct: age.map(|n| 100.0 * n as f64 / size as f64),
        race_pct: race.map(|n| 100.0 * n as f64 / size as f64),
        county_pct: county.map(|n| 100.0 * n as f64 / size as f64),
    })
}

pub const PREVALENCE_CSV_HEADER: &str = "week,population,mean,sd,q025,q25,q75,q975";

/// Writes prevalence series with the exact header
/// `week,population,mean,sd,q025,q25,q75,q975`.
pub fn write_prevalence_csv(path: &Path, series: &[&PrevalenceSeries]) -> Result<()> {
    let mut out = String::from(PREVALENCE_CSV_HEADER);
    out.push('\n');
    for s in series {
        for (off, week) in s.weeks.iter().enumerate() {
            out.push_str(&format!(
                "{week},{},{},{},{},{},{},{}\n",
                s.population, s.mean[off], s.sd[off], s.q025[off], s.q25[off], s.q75[off], s.q975[off]
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads prevalence summaries back; the per-draw matrix is not stored in
/// CSV, so `draw_matrix` comes back empty.
pub fn read_prevalence_csv(path: &Path) -> Result<Vec<PrevalenceSeries>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PREVALENCE_CSV_HEADER => {}
        other => {
            return Err(Error::BadHeader {
                path: path.display().to_string(),
                expected: PREVALENCE_CSV_HEADER.into(),
                found: other.map(|(_, h)| h.to_string()).unwrap_or_default(),
            });
        }
    }
    let mut rows: Vec<(String, i32, [f64; 6])> = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::MalformedRow {
                row,
                message: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let week: i32 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::MalformedRow { row, message: "bad week".into() })?;
        let mut nums = [0.0f64; 6];
        for (k, f) in fields[2..].iter().enumerate() {
            nums[k] = f.trim().parse().map_err(|_| Error::MalformedRow {
                row,
                message: format!("bad numeric field {:?}", f),
            })?;
        }
        rows.push((fields[1].trim().to_string(), week, nums));
    }
    let mut names: Vec<String> = Vec::new();
    for (name, _, _) in &rows {
        if !names.contains(name) {
            names.push(name.clone());
        }
    }
    let mut out = Vec::new();
    for name in names {
        let mut mine: Vec<&(String, i32, [f64; 6])> =
            rows.iter().filter(|r| r.0 == name).collect();
        mine.sort_by_key(|r| r.1);
        let weeks = WeekRange::new(mine.first().unwrap().1, mine.last().unwrap().1)?;
        if mine.len() != weeks.len() {
            return Err(Error::Other(format!(
                "population {name:?}: {} rows do not cover contiguous weeks {weeks}",
                mine.len()
            )));
        }
        let col = |k: usize| mine.iter().map(|r| r.2[k]).collect::<Vec<f64>>();
        out.push(PrevalenceSeries {
            population: name,
            weeks,
            mean: col(0),
            sd: col(1),
            q025: col(2),
            q25: col(3),
            q75: col(4),
            q975: col(5),
            draw_matrix: Vec::new(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CalibrationData;
    use crate::model::{logit, ModelConfig, ParameterDraw, Posterior};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weeks1() -> WeekRange {
        WeekRange::new(18, 18).unwrap()
    }

    fn draws_from(draws: Vec<ParameterDraw>, weeks: WeekRange) -> PosteriorDraws {
        let n = draws.len();
        PosteriorDraws {
            weeks,
            parameter_names: ParameterDraw::parameter_names(&weeks),
            draws,
            chains: 1,
            draws_per_chain: n,
            divergences: vec![0],
            diagnostics: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn table_with(counts: &[(usize, u64)]) -> PoststratTable {
        let mut arr = [0u64; NUM_CELLS];
        for &(i, n) in counts {
            arr[i] = n;
        }
        PoststratTable::new("t", arr).unwrap()
    }

    #[test]
    fn constant_field_gives_constant_average() {
        let weeks = weeks1();
        let mut draw = ParameterDraw::zeroed(weeks);
        draw.beta1 = logit(0.07);
        let draws = draws_from(vec![draw], weeks);
        let table = table_with(&[(0, 123), (17, 4), (59, 999)]);
        let series = poststratify(&draws, &table, weeks).unwrap();
        assert!((series.mean[0] - 0.07).abs() < 1e-12);
    }

    #[test]
    fn two_cell_weighted_mean() {
        let weeks = weeks1();
        let mut draw = ParameterDraw::zeroed(weeks);
        // two cells differing only in county: Lake at 2%, Porter at 4%
        draw.beta1 = logit(0.02);
        draw.alpha_county = [0.0, logit(0.04) - logit(0.02)];
        let lake = Demographics::new(Sex::Female, AgeGroup::Age0To17, Race::White, County::Lake);
        let porter =
            Demographics::new(Sex::Female, AgeGroup::Age0To17, Race::White, County::Porter);
        let table = table_with(&[(lake.cell_index(), 100), (porter.cell_index(), 300)]);
        let draws = draws_from(vec![draw], weeks);
        let series = poststratify(&draws, &table, weeks).unwrap();
        assert!((series.mean[0] - 0.035).abs() < 1e-12, "{}", series.mean[0]);
    }

    #[test]
    fn scaling_counts_leaves_average_unchanged() {
        let weeks = weeks1();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut draw = ParameterDraw::zeroed(weeks);
        draw.beta1 = -3.0;
        for a in draw.alpha_age.iter_mut() {
            *a = rng.random_range(-0.5..0.5);
        }
        let draws = draws_from(vec![draw], weeks);
        let mut counts = [0u64; NUM_CELLS];
        for c in counts.iter_mut() {
            *c = rng.random_range(0..1000);
        }
        counts[0] += 1;
        let t1 = PoststratTable::new("a", counts).unwrap();
        let t2 = PoststratTable::new("a", counts.map(|c| c * 2)).unwrap();
        let s1 = poststratify(&draws, &t1, weeks).unwrap();
        let s2 = poststratify(&draws, &t2, weeks).unwrap();
        assert!((s1.mean[0] - s2.mean[0]).abs() < 1e-14);
    }

    #[test]
    fn average_bounded_by_cell_extremes() {
        let weeks = weeks1();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let mut draw = ParameterDraw::zeroed(weeks);
            draw.beta1 = rng.random_range(-5.0..0.0);
            for a in draw.alpha_age.iter_mut() {
                *a = rng.random_range(-1.0..1.0);
            }
            for a in draw.alpha_race.iter_mut() {
                *a = rng.random_range(-1.0..1.0);
            }
            let mut counts = [0u64; NUM_CELLS];
            for c in counts.iter_mut() {
                *c = rng.random_range(0..500);
            }
            counts[3] += 1;
            let table = PoststratTable::new("r", counts).unwrap();
            let draws = draws_from(vec![draw.clone()], weeks);
            let series = poststratify(&draws, &table, weeks).unwrap();
            let pis: Vec<f64> = Demographics::all_cells()
                .filter(|c| table.count(c) > 0)
                .map(|c| crate::model::true_incidence(&draw, &c, 18).unwrap())
                .collect();
            let lo = pis.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = pis.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(series.mean[0] >= lo - 1e-12 && series.mean[0] <= hi + 1e-12);
        }
    }

    #[test]
    fn sample_proportional_table_reproduces_sample_mean() {
        let weeks = weeks1();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut draw = ParameterDraw::zeroed(weeks);
        draw.beta1 = -2.0;
        for a in draw.alpha_county.iter_mut() {
            *a = rng.random_range(-0.6..0.6);
        }
        let mut counts = [0u64; NUM_CELLS];
        for c in counts.iter_mut() {
            *c = rng.random_range(1..50);
        }
        let table = PoststratTable::new("sample", counts).unwrap();
        let draws = draws_from(vec![draw.clone()], weeks);
        let series = poststratify(&draws, &table, weeks).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for cell in Demographics::all_cells() {
            let n = table.count(&cell) as f64;
            num += n * crate::model::true_incidence(&draw, &cell, 18).unwrap();
            den += n;
        }
        assert!((series.mean[0] - num / den).abs() < 1e-12);
    }

    #[test]
    fn summaries_invariant_to_draw_order() {
        let weeks = weeks1();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut draws: Vec<ParameterDraw> = (0..40)
            .map(|_| {
                let mut d = ParameterDraw::zeroed(weeks);
                d.beta1 = rng.random_range(-4.0..0.0);
                d
            })
            .collect();
        let table = table_with(&[(5, 10), (20, 30)]);
        let a = poststratify(&draws_from(draws.clone(), weeks), &table, weeks).unwrap();
        draws.reverse();
        let b = poststratify(&draws_from(draws, weeks), &table, weeks).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.q025, b.q025);
        assert_eq!(a.q975, b.q975);
    }

    #[test]
    fn empty_draws_rejected() {
        let weeks = weeks1();
        let table = table_with(&[(0, 1)]);
        let err = poststratify(&draws_from(vec![], weeks), &table, weeks).unwrap_err();
        assert!(matches!(err, Error::EmptyDraws));
    }

    #[test]
    fn positivity_flags_empty_weeks_as_missing() {
        let weeks = WeekRange::new(18, 20).unwrap();
        let cell = Demographics::from_cell_index(0).unwrap();
        let mut records = Vec::new();
        for i in 0..100 {
            records.push(TestRecord { week: 18, demographics: cell, positive: i < 2 });
        }
        let s = raw_weekly_positivity(&records, weeks);
        assert_eq!(s.value(18), Some(0.02));
        assert_eq!(s.value(19), None);
        assert_eq!(s.value(20), None);
    }

    #[test]
    fn positivity_totals_consistent_with_counts() {
        let weeks = WeekRange::new(18, 22).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let records: Vec<TestRecord> = (0..500)
            .map(|_| TestRecord {
                week: rng.random_range(18..=22),
                demographics: Demographics::from_cell_index(rng.random_range(0..NUM_CELLS))
                    .unwrap(),
                positive: rng.random::<f64>() < 0.1,
            })
            .collect();
        let pos = weekly_positive_counts(&records, weeks);
        let total: f64 = pos.values.iter().flatten().sum();
        let expected = records.iter().filter(|r| r.positive).count() as f64;
        assert_eq!(total, expected);
    }

    #[test]
    fn describe_records_marginals() {
        let cell_f = Demographics::new(Sex::Female, AgeGroup::Age35To64, Race::White, County::Lake);
        let cell_m = Demographics::new(Sex::Male, AgeGroup::Age18To34, Race::Black, County::Porter);
        let mut records = Vec::new();
        for _ in 0..59 {
            records.push(TestRecord { week: 18, demographics: cell_f, positive: false });
        }
        for _ in 0..41 {
            records.push(TestRecord { week: 18, demographics: cell_m, positive: true });
        }
        let summary = describe_records("synthetic", &records).unwrap();
        assert_eq!(summary.size, 100);
        assert!((summary.sex_pct[0] - 59.0).abs() < 1e-12);
        assert!((summary.prevalence_pct.unwrap() - 41.0).abs() < 1e-12);
        let total: f64 = summary.age_pct.iter().sum();
        assert!((total - 100.0).abs() < 1e-9);

        let single = describe_records("one", &records[..1]).unwrap();
        assert_eq!(single.sex_pct, [100.0, 0.0]);
        assert!(describe_records("none", &[]).is_err());
    }

    #[test]
    fn identical_tables_give_identical_series() {
        let weeks = weeks1();
        let mut draw = ParameterDraw::zeroed(weeks);
        draw.beta1 = -2.3;
        let draws = draws_from(vec![draw], weeks);
        let t1 = table_with(&[(0, 5), (9, 10)]).with_name("hospital");
        let t2 = table_with(&[(0, 5), (9, 10)]).with_name("community");
        let s1 = poststratify(&draws, &t1, weeks).unwrap();
        let s2 = poststratify(&draws, &t2, weeks).unwrap();
        assert_eq!(s1.mean, s2.mean);
        assert_ne!(s1.population, s2.population);
    }

    #[test]
    fn prevalence_csv_roundtrip() {
        let weeks = WeekRange::new(18, 19).unwrap();
        let mut draw = ParameterDraw::zeroed(weeks);
        draw.beta1 = -2.0;
        let draws = draws_from(vec![draw], weeks);
        let table = table_with(&[(0, 1)]).with_name("pop");
        let series = poststratify(&draws, &table, weeks).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prev.csv");
        write_prevalence_csv(&path, &[&series]).unwrap();
        let read = read_prevalence_csv(&path).unwrap();
        assert_eq!(read.len(), 1);
        assert_eq!(read[0].population, "pop");
        assert_eq!(read[0].mean, series.mean);
        assert_eq!(read[0].q975, series.q975);
    }
}
