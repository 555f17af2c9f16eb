//! Per-group residual histories and the windowed features built from them.
//!
//! Each observed residual updates an exponentially weighted running mean;
//! once a group has more residuals than the window size, every new residual
//! also yields one supervised row: the previous `window` weighted means
//! (most recent first, then a group code if enabled) as features, the raw
//! residual as target. The quantile forest trains on these rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LpciError, Result};
use crate::matrix::Matrix;

/// truth\[i\] - prediction\[i\], elementwise.
pub fn compute_residuals(truth: &[f64], prediction: &[f64]) -> Result<Vec<f64>> {
    if truth.len() != prediction.len() {
        return Err(LpciError::Argument(format!(
            "{} truths but {} predictions",
            truth.len(),
            prediction.len()
        )));
    }
    Ok(truth.iter().zip(prediction).map(|(y, p)| y - p).collect())
}

/// Exponentially weighted means of a residual series: the k-th output is
/// (1/k) * sum over i <= k of gamma^(k-i) * r_i. The 1/k normalization
/// shrinks early values toward zero instead of inflating them.
pub fn ew_mean_series(residuals: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(LpciError::Argument(format!("gamma must be in [0,1], got {gamma}")));
    }
    if residuals.is_empty() {
        return Err(LpciError::Argument("cannot smooth an empty residual series".into()));
    }
    let mut out = Vec::with_capacity(residuals.len());
    let mut weighted_sum = 0.0;
    for (k, r) in residuals.iter().enumerate() {
        weighted_sum = gamma * weighted_sum + r;
        out.push(weighted_sum / (k + 1) as f64);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GroupHistory {
    code: usize,
    raw: Vec<f64>,
    ew: Vec<f64>,
    /// gamma-discounted running sum; ew is this over the count.
    weighted_sum: f64,
    /// Supervised rows flattened in feature-width chunks, appended as the
    /// history crosses the window threshold.
    rows: Vec<f64>,
    row_targets: Vec<f64>,
}

/// Residual histories for all groups plus the training matrix they induce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualState {
    groups: BTreeMap<String, GroupHistory>,
    window: usize,
    gamma: f64,
    include_group_code: bool,
}

impl ResidualState {
    pub fn new(window: usize, gamma: f64, include_group_code: bool) -> Result<Self> {
        if window == 0 {
            return Err(LpciError::Argument("window must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(LpciError::Argument(format!("gamma must be in [0,1], got {gamma}")));
        }
        Ok(Self { groups: BTreeMap::new(), window, gamma, include_group_code })
    }

    pub fn register_group(&mut self, name: &str, code: usize) -> Result<()> {
        if self.groups.contains_key(name) {
            return Err(LpciError::State(format!("group {name} is already registered")));
        }
        self.groups.insert(
            name.to_owned(),
            GroupHistory {
                code,
                raw: Vec::new(),
                ew: Vec::new(),
                weighted_sum: 0.0,
                rows: Vec::new(),
                row_targets: Vec::new(),
            },
        );
        Ok(())
    }

    /// Number of features per supervised row.
    pub fn feature_width(&self) -> usize {
        self.window + usize::from(self.include_group_code)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn groups(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn history_len(&self, group: &str) -> Result<usize> {
        Ok(self.history(group)?.raw.len())
    }

    pub fn raw_series(&self, group: &str) -> Result<&[f64]> {
        Ok(&self.history(group)?.raw)
    }

    pub fn ew_series(&self, group: &str) -> Result<&[f64]> {
        Ok(&self.history(group)?.ew)
    }

    fn history(&self, group: &str) -> Result<&GroupHistory> {
        self.groups
            .get(group)
            .ok_or_else(|| LpciError::State(format!("group {group} is not registered")))
    }

    /// Absorbs one residual. Once the history exceeds the window, each call
    /// also appends a supervised row whose features are the weighted means
    /// just before this residual, most recent first.
    pub fn append(&mut self, group: &str, residual: f64) -> Result<()> {
        let window = self.window;
        let gamma = self.gamma;
        let include_code = self.include_group_code;
        let h = self
            .groups
            .get_mut(group)
            .ok_or_else(|| LpciError::State(format!("group {group} is not registered")))?;
        if h.raw.len() >= window {
            // ew[len-1] down to ew[len-window] as features for this target.
            let len = h.ew.len();
            for back in 0..window {
                h.rows.push(h.ew[len - 1 - back]);
            }
            if include_code {
                h.rows.push(h.code as f64);
            }
            h.row_targets.push(residual);
        }
        h.raw.push(residual);
        h.weighted_sum = gamma * h.weighted_sum + residual;
        h.ew.push(h.weighted_sum / h.raw.len() as f64);
        Ok(())
    }

    /// Fills a fresh group's history with zero residuals so it can be
    /// queried before any true residual is observed.
    pub fn seed_dummy_residuals(&mut self, group: &str, count: usize) -> Result<()> {
        if self.history(group)?.raw.is_empty() {
            for _ in 0..count {
                self.append(group, 0.0)?;
            }
            Ok(())
        } else {
            Err(LpciError::State(format!(
                "group {group} already has residuals; dummy seeding must come first"
            )))
        }
    }

    /// Features for predicting the group's next residual: the latest
    /// `window` weighted means, most recent first, then the group code if
    /// enabled.
    pub fn prediction_features(&self, group: &str) -> Result<Vec<f64>> {
        let h = self.history(group)?;
        let len = h.ew.len();
        if len < self.window {
            return Err(LpciError::InsufficientHistory(format!(
                "group {group} has {len} residuals, window needs {}",
                self.window
            )));
        }
        let mut x = Vec::with_capacity(self.feature_width());
        for back in 0..self.window {
            x.push(h.ew[len - 1 - back]);
        }
        if self.include_group_code {
            x.push(h.code as f64);
        }
        Ok(x)
    }

    /// Training matrix restricted to the named groups, which must each have
    /// produced at least one supervised row. Rows are ordered by group name,
    /// then by time of the target residual.
    pub fn build_training_matrix(&self, groups: &[String]) -> Result<(Matrix, Vec<f64>)> {
        let mut m = Matrix::new(self.feature_width());
        let mut targets = Vec::new();
        for name in groups {
            let h = self
                .groups
                .get(name)
                .ok_or_else(|| LpciError::Argument(format!("unknown group {name}")))?;
            if h.row_targets.is_empty() {
                return Err(LpciError::InsufficientHistory(format!(
                    "group {name} has {} residuals, needs more than the window {}",
                    h.raw.len(),
                    self.window
                )));
            }
            let w = self.feature_width();
            for (i, t) in h.row_targets.iter().enumerate() {
                m.push_row(&h.rows[i * w..(i + 1) * w])?;
                targets.push(*t);
            }
        }
        Ok((m, targets))
    }

    /// Training matrix over every group that has produced rows; groups that
    /// have not yet crossed the window threshold are skipped.
    pub fn training_matrix_all(&self) -> Result<(Matrix, Vec<f64>)> {
        let eligible: Vec<String> = self
            .groups
            .iter()
            .filter(|(_, h)| !h.row_targets.is_empty())
            .map(|(name, _)| name.clone())
            .collect();
        if eligible.is_empty() {
            return Err(LpciError::InsufficientHistory(
                "no group has enough residuals to form a training row".into(),
            ));
        }
        self.build_training_matrix(&eligible)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(window: usize, gamma: f64) -> ResidualState {
        ResidualState::new(window, gamma, true).unwrap()
    }

    #[test]
    fn residuals_subtract_elementwise() {
        let r = compute_residuals(&[3.0, 1.0], &[1.0, 4.0]).unwrap();
        assert_eq!(r, vec![2.0, -3.0]);
        assert!(compute_residuals(&[1.0], &[]).is_err());
    }

    #[test]
    fn gamma_one_gives_running_means() {
        let ew = ew_mean_series(&[1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(ew, vec![1.0, 1.5, 2.0]);
    }

    #[test]
    fn gamma_half_discounts_by_hand() {
        // k=1: 4/1. k=2: (0.5*4 + 2)/2 = 2.
        let ew = ew_mean_series(&[4.0, 2.0], 0.5).unwrap();
        assert_eq!(ew, vec![4.0, 2.0]);
    }

    #[test]
    fn gamma_zero_shrinks_the_latest_residual() {
        let ew = ew_mean_series(&[4.0, 2.0, 6.0], 0.0).unwrap();
        assert_eq!(ew, vec![4.0, 1.0, 2.0]);
    }

    #[test]
    fn gamma_outside_unit_interval_is_rejected() {
        assert!(ew_mean_series(&[1.0], -0.1).is_err());
        assert!(ew_mean_series(&[1.0], 1.1).is_err());
    }

    #[test]
    fn incremental_state_matches_the_batch_series() {
        let residuals: Vec<f64> = (0..40).map(|i| f64::from(i).sin() * 2.0).collect();
        let batch = ew_mean_series(&residuals, 0.9).unwrap();
        let mut s = state(5, 0.9);
        s.register_group("g", 0).unwrap();
        for r in &residuals {
            s.append("g", *r).unwrap();
        }
        let incremental = s.ew_series("g").unwrap();
        for (a, b) in incremental.iter().zip(&batch) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn first_row_appears_when_history_exceeds_window() {
        let mut s = state(3, 0.9);
        s.register_group("g", 7).unwrap();
        for r in [1.0, 2.0, 3.0] {
            s.append("g", r).unwrap();
        }
        assert!(s.training_matrix_all().is_err(), "window not yet exceeded");
        s.append("g", 4.0).unwrap();
        let (m, targets) = s.training_matrix_all().unwrap();
        assert_eq!(m.n_rows(), 1);
        assert_eq!(targets, vec![4.0]);
        // Features: ew means of (1,2,3) most recent first, then the code.
        let ew = ew_mean_series(&[1.0, 2.0, 3.0], 0.9).unwrap();
        assert_eq!(m.row(0), &[ew[2], ew[1], ew[0], 7.0]);
    }

    #[test]
    fn prediction_features_use_the_latest_window() {
        let mut s = state(2, 0.5);
        s.register_group("g", 3).unwrap();
        for r in [1.0, 2.0, 3.0] {
            s.append("g", r).unwrap();
        }
        let ew = ew_mean_series(&[1.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(s.prediction_features("g").unwrap(), vec![ew[2], ew[1], 3.0]);
    }

    #[test]
    fn insufficient_history_is_reported() {
        let mut s = state(4, 0.9);
        s.register_group("g", 0).unwrap();
        s.append("g", 1.0).unwrap();
        assert!(matches!(
            s.prediction_features("g"),
            Err(LpciError::InsufficientHistory(_))
        ));
        assert!(matches!(
            s.build_training_matrix(&["g".to_owned()]),
            Err(LpciError::InsufficientHistory(_))
        ));
    }

    #[test]
    fn dummy_seeding_then_real_appends_build_rows() {
        let window = 20;
        let mut s = ResidualState::new(window, 0.9, false).unwrap();
        s.register_group("g", 0).unwrap();
        s.seed_dummy_residuals("g", window).unwrap();
        assert_eq!(s.history_len("g").unwrap(), window);
        let reals: Vec<f64> = (0..20).map(|i| f64::from(i) * 0.1 - 1.0).collect();
        for r in &reals {
            s.append("g", *r).unwrap();
        }
        let (m, targets) = s.training_matrix_all().unwrap();
        assert_eq!(m.n_rows(), 20);
        assert_eq!(targets, reals);
        // Dummy zeros plus the real residuals form one continuous series.
        let mut full = vec![0.0; window];
        full.extend_from_slice(&reals);
        let ew = ew_mean_series(&full, 0.9).unwrap();
        let x = s.prediction_features("g").unwrap();
        let len = ew.len();
        for back in 0..window {
            assert_eq!(x[back], ew[len - 1 - back]);
        }
    }

    #[test]
    fn dummy_seeding_after_real_data_is_rejected() {
        let mut s = state(2, 0.9);
        s.register_group("g", 0).unwrap();
        s.append("g", 1.0).unwrap();
        assert!(s.seed_dummy_residuals("g", 2).is_err());
    }

    #[test]
    fn matrix_shape_covers_all_groups_and_times() {
        let mut s = state(20, 0.9);
        let names: Vec<String> = (0..300).map(|i| format!("g{i:03}")).collect();
        for (code, name) in names.iter().enumerate() {
            s.register_group(name, code).unwrap();
        }
        for t in 0..30 {
            for name in &names {
                s.append(name, f64::from(t) * 0.01).unwrap();
            }
        }
        let (m, targets) = s.training_matrix_all().unwrap();
        // 30 residuals, window 20: rows 21 through 30, so 10 per group.
        assert_eq!(m.n_rows(), 300 * 10);
        assert_eq!(m.n_cols(), 21);
        assert_eq!(targets.len(), 300 * 10);
    }

    #[test]
    fn unknown_group_is_an_error() {
        let mut s = state(2, 0.9);
        assert!(s.append("nope", 1.0).is_err());
        assert!(s.prediction_features("nope").is_err());
        assert!(matches!(
            s.build_training_matrix(&["nope".to_owned()]),
            Err(LpciError::Argument(_))
        ));
    }

    #[test]
    fn duplicate_registration_is_an_error() {
        let mut s = state(2, 0.9);
        s.register_group("g", 0).unwrap();
        assert!(s.register_group("g", 1).is_err());
    }
}
