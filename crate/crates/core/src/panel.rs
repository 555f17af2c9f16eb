//! Balanced panel ingestion, validation, splitting, scaling, and featurization.
//!
//! A panel is balanced: every group is observed at every time index, and the
//! time indices are consecutive integers. Positions in `times` double as
//! normalized indices 0..T-1; the stored values are the original timestamps.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{LpciError, Result};
use crate::seeding::stream_rng;

/// Column-name mapping for CSV ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub group: String,
    pub time: String,
    pub target: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { group: "group".into(), time: "time".into(), target: "y".into() }
    }
}

/// One raw observation used to assemble a panel.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub group: String,
    pub time: i64,
    pub target: f64,
    pub exog: Vec<f64>,
}

/// Balanced panel of (group, time, target, exogenous) observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    groups: Vec<String>,
    times: Vec<i64>,
    /// Targets, row-major by (group, time).
    values: Vec<f64>,
    /// Exogenous features, row-major by (group, time, feature).
    exog: Vec<f64>,
    exog_names: Vec<String>,
}

impl PanelDataset {
    /// Assembles and validates a panel from raw observations.
    ///
    /// Requires a complete groups x times grid with no duplicates, at least
    /// two consecutive integer time indices, and a consistent exogenous
    /// width matching `exog_names`.
    pub fn from_observations(rows: &[Observation], exog_names: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(LpciError::Argument("no observations".into()));
        }
        let n_exog = exog_names.len();
        let groups: Vec<String> =
            rows.iter().map(|r| r.group.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let times: Vec<i64> =
            rows.iter().map(|r| r.time).collect::<BTreeSet<_>>().into_iter().collect();
        if times.len() < 2 {
            return Err(LpciError::Argument("panel needs at least two time points".into()));
        }
        for pair in times.windows(2) {
            if pair[1] - pair[0] != 1 {
                return Err(LpciError::Argument(format!(
                    "time indices must be consecutive integers, got gap {}..{}",
                    pair[0], pair[1]
                )));
            }
        }
        let g_index: BTreeMap<&str, usize> =
            groups.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
        let t0 = times[0];
        let (n_g, n_t) = (groups.len(), times.len());
        let mut values = vec![f64::NAN; n_g * n_t];
        let mut exog = vec![f64::NAN; n_g * n_t * n_exog];
        let mut seen = vec![false; n_g * n_t];
        for r in rows {
            if r.exog.len() != n_exog {
                return Err(LpciError::Schema(format!(
                    "observation ({}, {}) has {} exogenous values, expected {}",
                    r.group,
                    r.time,
                    r.exog.len(),
                    n_exog
                )));
            }
            let gi = g_index[r.group.as_str()];
            let ti = (r.time - t0) as usize;
            let cell = gi * n_t + ti;
            if seen[cell] {
                return Err(LpciError::Duplicate { group: r.group.clone(), time: r.time });
            }
            seen[cell] = true;
            values[cell] = r.target;
            exog[cell * n_exog..(cell + 1) * n_exog].copy_from_slice(&r.exog);
        }
        if let Some(cell) = seen.iter().position(|s| !s) {
            return Err(LpciError::Unbalanced(format!(
                "missing observation for group {} at time {}",
                groups[cell / n_t],
                times[cell % n_t]
            )));
        }
        Ok(Self { groups, times, values, exog, exog_names })
    }

    /// Loads a panel from a headered CSV file.
    ///
    /// The schema names the group, time, and target columns; every other
    /// column is parsed as a numeric exogenous feature.
    pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let col = |name: &str| -> Result<usize> {
            headers.iter().position(|h| h == name).ok_or_else(|| {
                LpciError::Schema(format!("required column {name:?} not found in {path:?}"))
            })
        };
        let (gc, tc, yc) = (col(&schema.group)?, col(&schema.time)?, col(&schema.target)?);
        let exog_cols: Vec<usize> =
            (0..headers.len()).filter(|i| *i != gc && *i != tc && *i != yc).collect();
        let exog_names: Vec<String> = exog_cols.iter().map(|i| headers[*i].clone()).collect();

        let parse_f64 = |field: &str, column: &str, line: u64| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|_| {
                LpciError::Schema(format!(
                    "column {column:?} line {line}: {field:?} is not numeric"
                ))
            })
        };
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let time: i64 = record[tc].trim().parse().map_err(|_| {
                LpciError::Schema(format!(
                    "column {:?} line {line}: {:?} is not an integer time index",
                    schema.time, &record[tc]
                ))
            })?;
            let target = parse_f64(&record[yc], &schema.target, line)?;
            let exog = exog_cols
                .iter()
                .map(|i| parse_f64(&record[*i], &headers[*i], line))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(Observation { group: record[gc].to_string(), time, target, exog });
        }
        Self::from_observations(&rows, exog_names)
    }

    /// Writes the panel as a headered CSV with default column names.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let schema = CsvSchema::default();
        let mut header = vec![schema.group, schema.time, schema.target];
        header.extend(self.exog_names.iter().cloned());
        w.write_record(&header)?;
        for (gi, g) in self.groups.iter().enumerate() {
            for (ti, t) in self.times.iter().enumerate() {
                let mut rec = vec![g.clone(), t.to_string(), self.value(gi, ti).to_string()];
                rec.extend(self.exog_row(gi, ti).iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_exog(&self) -> usize {
        self.exog_names.len()
    }

    pub fn exog_names(&self) -> &[String] {
        &self.exog_names
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.binary_search_by(|g| g.as_str().cmp(name)).ok()
    }

    /// Target for (group index, time index).
    pub fn value(&self, group_idx: usize, time_idx: usize) -> f64 {
        self.values[group_idx * self.n_times() + time_idx]
    }

    /// Full target series of one group, time ascending.
    pub fn group_series(&self, group_idx: usize) -> &[f64] {
        let n_t = self.n_times();
        &self.values[group_idx * n_t..(group_idx + 1) * n_t]
    }

    /// Exogenous features for (group index, time index).
    pub fn exog_row(&self, group_idx: usize, time_idx: usize) -> &[f64] {
        let k = self.n_exog();
        let cell = group_idx * self.n_times() + time_idx;
        &self.exog[cell * k..(cell + 1) * k]
    }

    /// New panel with targets transformed by `f(group_idx, value)`.
    pub fn map_targets(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let n_t = self.n_times();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(cell, v)| f(cell / n_t, *v))
            .collect();
        Self { values, ..self.clone() }
    }

    /// Panel restricted to the named groups (any order, deduplicated).
    pub fn subset_groups(&self, keep: &[String]) -> Result<Self> {
        let keep: BTreeSet<&String> = keep.iter().collect();
        if keep.is_empty() {
            return Err(LpciError::Argument("group subset is empty".into()));
        }
        for g in &keep {
            if self.group_index(g).is_none() {
                return Err(LpciError::Argument(format!("unknown group {g:?}")));
            }
        }
        let n_t = self.n_times();
        let k = self.n_exog();
        let mut groups = Vec::new();
        let mut values = Vec::new();
        let mut exog = Vec::new();
        for (gi, g) in self.groups.iter().enumerate() {
            if keep.contains(g) {
                groups.push(g.clone());
                values.extend_from_slice(self.group_series(gi));
                exog.extend_from_slice(&self.exog[gi * n_t * k..(gi + 1) * n_t * k]);
            }
        }
        Ok(Self { groups, times: self.times.clone(), values, exog, exog_names: self.exog_names.clone() })
    }

    /// Random group-disjoint split: about `test_fraction` of the groups are
    /// moved to the test panel, the rest stay in train. Both keep all times.
    /// Deterministic given the seed.
    pub fn split_cross_sectional(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if self.n_groups() < 2 {
            return Err(LpciError::Argument("cross-sectional split needs at least 2 groups".into()));
        }
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(LpciError::Argument(format!(
                "test_fraction must be in (0,1), got {test_fraction}"
            )));
        }
        let n_test = (test_fraction * self.n_groups() as f64).round() as usize;
        if n_test == 0 || n_test >= self.n_groups() {
            return Err(LpciError::Argument(format!(
                "test_fraction {test_fraction} leaves an empty split for {} groups",
                self.n_groups()
            )));
        }
        let mut shuffled = self.groups.clone();
        shuffled.shuffle(&mut stream_rng(seed, "cross_sectional_split", 0));
        let test_groups = shuffled[..n_test].to_vec();
        let train_groups = shuffled[n_test..].to_vec();
        Ok((self.subset_groups(&train_groups)?, self.subset_groups(&test_groups)?))
    }

    /// Time split: train keeps times <= split_time, test keeps the rest,
    /// for all groups. Each side must retain at least two time points.
    pub fn split_longitudinal(&self, split_time: i64) -> Result<(Self, Self)> {
        let first = self.times[0];
        let last = *self.times.last().expect("panel has times");
        if split_time <= first || split_time >= last {
            return Err(LpciError::Argument(format!(
                "split_time {split_time} is outside the open time range ({first}, {last})"
            )));
        }
        let n_train = self.times.iter().filter(|t| **t <= split_time).count();
        let n_test = self.n_times() - n_train;
        if n_train < 2 || n_test < 2 {
            return Err(LpciError::Argument(format!(
                "split at {split_time} leaves {n_train} train and {n_test} test times; each side needs at least 2"
            )));
        }
        let n_t = self.n_times();
        let k = self.n_exog();
        let slice_side = |range: std::ops::Range<usize>| {
            let mut values = Vec::new();
            let mut exog = Vec::new();
            for gi in 0..self.n_groups() {
                values.extend_from_slice(&self.group_series(gi)[range.clone()]);
                exog.extend_from_slice(
                    &self.exog[(gi * n_t + range.start) * k..(gi * n_t + range.end) * k],
                );
            }
            Self {
                groups: self.groups.clone(),
                times: self.times[range].to_vec(),
                values,
                exog,
                exog_names: self.exog_names.clone(),
            }
        };
        Ok((slice_side(0..n_train), slice_side(n_train..n_t)))
    }

    /// Standardization parameters pooled over every (group, time) target.
    pub fn fit_target_scaler(&self) -> Result<ScalerParams> {
        ScalerParams::fit(&self.values)
    }
}

/// Mean/std pair for standardizing one column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: f64,
    pub std: f64,
}

impl ScalerParams {
    /// Fits mean and population standard deviation (divisor n).
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(LpciError::Argument("cannot fit a scaler on no values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 0.0 || !std.is_finite() {
            return Err(LpciError::DegenerateScale(format!(
                "column is constant (mean {mean}), cannot standardize"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Deterministic label encoding of group identifiers.
///
/// Codes follow sorted identifier order; groups added later (unseen test
/// groups) extend the code space after the existing codes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupEncoder {
    codes: BTreeMap<String, usize>,
}

impl GroupEncoder {
    pub fn fit(groups: &[String]) -> Self {
        let mut sorted: Vec<&String> = groups.iter().collect();
        sorted.sort();
        sorted.dedup();
        let codes = sorted.into_iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
        Self { codes }
    }

    /// Assigns the next codes to unseen groups in sorted order.
    pub fn extend(&mut self, groups: &[String]) -> Result<()> {
        let mut sorted: Vec<&String> = groups.iter().collect();
        sorted.sort();
        sorted.dedup();
        let mut next = self.codes.len();
        for g in sorted {
            if self.codes.contains_key(g) {
                return Err(LpciError::State(format!("group {g:?} is already encoded")));
            }
            self.codes.insert(g.clone(), next);
            next += 1;
        }
        Ok(())
    }

    pub fn code(&self, group: &str) -> Option<usize> {
        self.codes.get(group).copied()
    }

    pub fn contains(&self, group: &str) -> bool {
        self.codes.contains_key(group)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// One lag-featurized row derived from a panel.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedRow {
    pub group_code: usize,
    pub lagged_target: f64,
    pub exog: Vec<f64>,
    pub time: i64,
    pub target: f64,
}

/// Lag-featurized view of a panel: one row per (group, time) from the second
/// time index on, since the first has no lag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SupervisedPanel {
    pub rows: Vec<SupervisedRow>,
}

/// Builds supervised rows with a single lagged target, the group code, and
/// any exogenous features. Row count is |groups| * (|times| - 1).
pub fn make_supervised(d: &PanelDataset) -> SupervisedPanel {
    let encoder = GroupEncoder::fit(d.groups());
    let mut rows = Vec::with_capacity(d.n_groups() * (d.n_times() - 1));
    for (gi, g) in d.groups().iter().enumerate() {
        let code = encoder.code(g).expect("encoder covers panel groups");
        for ti in 1..d.n_times() {
            rows.push(SupervisedRow {
                group_code: code,
                lagged_target: d.value(gi, ti - 1),
                exog: d.exog_row(gi, ti).to_vec(),
                time: d.times()[ti],
                target: d.value(gi, ti),
            });
        }
    }
    SupervisedPanel { rows }
}
