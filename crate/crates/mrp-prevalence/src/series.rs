//! Week-indexed metric series with missing values, and their CSV form
//! (`week,name,value`).

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::WeekRange;
use crate::error::{Error, Result};

/// A weekly surveillance metric; `None` marks weeks with no observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub weeks: WeekRange,
    pub values: Vec<Option<f64>>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, weeks: WeekRange, values: Vec<Option<f64>>) -> Result<Self> {
        let name = name.into();
        if values.len() != weeks.len() {
            return Err(Error::Other(format!(
                "series {name:?}: {} values for {} weeks",
                values.len(),
                weeks.len()
            )));
        }
        Ok(MetricSeries { name, weeks, values })
    }

    /// Builds a series spanning the observed weeks; gaps become missing.
    pub fn from_pairs(name: impl Into<String>, pairs: &[(i32, f64)]) -> Result<Self> {
        let name = name.into();
        if pairs.is_empty() {
            return Err(Error::EmptySeries { name });
        }
        let first = pairs.iter().map(|p| p.0).min().unwrap();
        let last = pairs.iter().map(|p| p.0).max().unwrap();
        let weeks = WeekRange::new(first, last)?;
        let mut values = vec![None; weeks.len()];
        for &(week, v) in pairs {
            values[weeks.offset(week).unwrap()] = Some(v);
        }
        Ok(MetricSeries { name, weeks, values })
    }

    pub fn dense(name: impl Into<String>, weeks: WeekRange, values: Vec<f64>) -> Result<Self> {
        Self::new(name, weeks, values.into_iter().map(Some).collect())
    }

    pub fn value(&self, week: i32) -> Option<f64> {
        self.weeks.offset(week).and_then(|o| self.values[o])
    }

    pub fn n_observed(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Week-over-week changes; entry i is the change into week first+1+i,
    /// defined only when both endpoints are observed.
    pub fn first_differences(&self) -> Vec<Option<f64>> {
        self.values
            .windows(2)
            .map(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            })
            .collect()
    }
}

pub const METRIC_CSV_HEADER: &str = "week,name,value";

/// Writes series as `week,name,value` rows; missing weeks are omitted.
pub fn write_metric_csv(path: &Path, series: &[&MetricSeries]) -> Result<()> {
    let mut out = String::from(METRIC_CSV_HEADER);
    out.push('\n');
    for s in series {
        for (off, v) in s.values.iter().enumerate() {
            if let Some(v) = v {
                out.push_str(&format!("{},{},{}\n", s.weeks.week_at(off), s.name, v));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads every series in a `week,name,value` file, one `MetricSeries` per
/// distinct name.
pub fn read_metric_csv(path: &Path) -> Result<Vec<MetricSeries>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == METRIC_CSV_HEADER => {}
        other => {
            return Err(Error::BadHeader {
                path: path.display().to_string(),
                expected: METRIC_CSV_HEADER.into(),
                found: other.map(|(_, h)| h.to_string()).unwrap_or_default(),
            });
        }
    }
    let mut by_name: BTreeMap<String, Vec<(i32, f64)>> = BTreeMap::new();
    for (i, line) in lines {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let week: i32 = fields
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::MalformedRow { row, message: format!("bad week in {line:?}") })?;
        let name = fields
            .next()
            .ok_or(Error::MalformedRow { row, message: "missing name field".into() })?
            .trim()
            .to_string();
        let value: f64 = fields
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::MalformedRow { row, message: format!("bad value in {line:?}") })?;
        let entries = by_name.entry(name.clone()).or_default();
        if entries.iter().any(|&(w, _)| w == week) {
            return Err(Error::MalformedRow {
                row,
                message: format!("duplicate week {week} for series {name:?}"),
            });
        }
        entries.push((week, value));
    }
    by_name
        .into_iter()
        .map(|(name, pairs)| MetricSeries::from_pairs(name, &pairs))
        .collect()
}
