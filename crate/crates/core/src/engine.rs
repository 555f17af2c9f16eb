//! The interval engine: a fold-ensemble point predictor, a quantile forest
//! over windowed residual summaries, interval endpoints with a
//! width-minimizing quantile offset, and the online loop that predicts,
//! observes truths, absorbs residuals, and refits the quantile forest on
//! schedule.
//!
//! All point predictions and interval endpoints are computed in
//! standardized target space and inverse-transformed for reporting.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LpciError, Result};
use crate::forest::{ForestParams, QuantileForest};
use crate::matrix::Matrix;
use crate::panel::{GroupEncoder, PanelDataset, ScalerParams};
use crate::records::{IntervalRecord, PredictedInterval};
use crate::residuals::ResidualState;
use crate::seeding::{stream_rng, stream_seed};

/// Evaluation protocol: intervals for unseen groups over the training time
/// range, or for the training groups over future times.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    CrossSectional,
    Longitudinal,
}

/// Engine hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpciConfig {
    /// Nominal miscoverage level.
    pub alpha: f64,
    /// Number of smoothed-residual lags fed to the quantile forest.
    pub window: usize,
    /// Exponential discount for the residual means.
    pub gamma: f64,
    /// Grid resolution for the quantile-offset search over [0, alpha].
    pub beta_grid_size: usize,
    /// Quantile forest refit period, in time steps.
    pub retrain_every: usize,
    /// Point-predictor ensemble folds; each forest holds one fold of
    /// groups out and predictions average over all folds.
    pub n_folds: usize,
    /// Lagged-target features for the point predictor.
    pub n_lags: usize,
    /// Feed the integer group code to both forests.
    pub include_group_feature: bool,
    /// Standardize each group by its own moments instead of the pooled
    /// training moments. Incompatible with cross-sectional evaluation.
    pub per_group_scaling: bool,
    pub point_forest: ForestParams,
    pub qrf_forest: ForestParams,
    pub seed: u64,
}

impl Default for LpciConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            window: 20,
            gamma: 0.9,
            beta_grid_size: 20,
            retrain_every: 1,
            n_folds: 5,
            n_lags: 1,
            include_group_feature: true,
            per_group_scaling: false,
            point_forest: ForestParams::default(),
            // Interval endpoints are tail quantiles of the residual
            // distribution; a leaf needs a few multiples of 1/tail-mass
            // samples before those quantiles stop collapsing inward, so the
            // quantile forest gets a much fatter leaf floor than the point
            // forest.
            qrf_forest: ForestParams { min_leaf_size: 50, ..ForestParams::default() },
            seed: 0,
        }
    }
}

impl LpciConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(LpciError::Config(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if self.window == 0 {
            return Err(LpciError::Config("window must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(LpciError::Config(format!("gamma must be in [0,1], got {}", self.gamma)));
        }
        if self.beta_grid_size < 2 {
            return Err(LpciError::Config("beta_grid_size must be at least 2".into()));
        }
        if self.retrain_every == 0 {
            return Err(LpciError::Config("retrain_every must be at least 1".into()));
        }
        if self.n_folds == 0 {
            return Err(LpciError::Config("n_folds must be at least 1".into()));
        }
        if self.n_lags == 0 {
            return Err(LpciError::Config("n_lags must be at least 1".into()));
        }
        Ok(())
    }
}

/// Width-minimizing lower quantile level: evaluates the offset p on the
/// uniform grid {0, alpha/(grid_size-1), ..., alpha} and returns the p
/// minimizing quantile(1-alpha+p) - quantile(p), smallest p on ties.
pub fn optimize_beta(quantile_fn: impl Fn(f64) -> f64, alpha: f64, grid_size: usize) -> f64 {
    assert!(grid_size >= 2, "beta grid needs at least 2 points");
    assert!(0.0 < alpha && alpha < 1.0, "alpha must be in (0,1)");
    let mut best_p = 0.0;
    let mut best_width = f64::INFINITY;
    for i in 0..grid_size {
        let p = alpha * i as f64 / (grid_size - 1) as f64;
        let width = quantile_fn(1.0 - alpha + p) - quantile_fn(p);
        if width < best_width {
            best_width = width;
            best_p = p;
        }
    }
    best_p
}

/// Target standardization fitted on the training panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum TargetScaler {
    Global(ScalerParams),
    PerGroup(BTreeMap<String, ScalerParams>),
}

impl TargetScaler {
    fn params(&self, group: &str) -> Result<ScalerParams> {
        match self {
            TargetScaler::Global(p) => Ok(*p),
            TargetScaler::PerGroup(m) => m
                .get(group)
                .copied()
                .ok_or_else(|| LpciError::State(format!("no scaler fitted for group {group}"))),
        }
    }

    fn scale(&self, group: &str, y: f64) -> Result<f64> {
        Ok(self.params(group)?.apply(y))
    }

    fn invert(&self, group: &str, z: f64) -> Result<f64> {
        Ok(self.params(group)?.invert(z))
    }

    /// Pooled training std, when a single scale applies to every group.
    fn global_std(&self) -> Option<f64> {
        match self {
            TargetScaler::Global(p) => Some(p.std),
            TargetScaler::PerGroup(_) => None,
        }
    }
}

/// Point-predictor feature layout, shared between fit and step time:
/// group code (when enabled), then target lags most recent first
/// (zero-filled before the series start), then exogenous features.
fn point_features(
    code: usize,
    include_code: bool,
    n_lags: usize,
    lags: impl Iterator<Item = f64>,
    exog: &[f64],
) -> Vec<f64> {
    let mut x = Vec::with_capacity(usize::from(include_code) + n_lags + exog.len());
    if include_code {
        x.push(code as f64);
    }
    x.extend(lags);
    debug_assert_eq!(x.len(), usize::from(include_code) + n_lags);
    x.extend_from_slice(exog);
    x
}

/// Fitted engine state; advances one time step at a time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpciModel {
    config: LpciConfig,
    encoder: GroupEncoder,
    scaler: TargetScaler,
    point_ensemble: Vec<QuantileForest>,
    qrf: QuantileForest,
    state: ResidualState,
    /// Scaled target history per group, most recent last, capped at n_lags.
    last_values: BTreeMap<String, Vec<f64>>,
    /// Groups the next step must cover, sorted.
    active_groups: Vec<String>,
    train_times: Vec<i64>,
    next_time: i64,
    steps_taken: usize,
    retrain_count: usize,
    n_exog: usize,
}

impl LpciModel {
    /// Trains the point ensemble on the panel, derives each group's
    /// residuals from the fold forest that held it out, and fits the
    /// initial quantile forest on the windowed residual matrix.
    pub fn fit(train: &PanelDataset, config: &LpciConfig) -> Result<Self> {
        config.validate()?;
        let n_t = train.n_times();
        if n_t <= config.window {
            return Err(LpciError::Config(format!(
                "{} observed times cannot exceed the window {}",
                n_t, config.window
            )));
        }
        if train.n_groups() < config.n_folds {
            return Err(LpciError::Config(format!(
                "{} groups cannot fill {} folds",
                train.n_groups(),
                config.n_folds
            )));
        }

        let groups = train.groups().to_vec();
        let encoder = GroupEncoder::fit(&groups);
        let scaler = if config.per_group_scaling {
            let mut per_group = BTreeMap::new();
            for (gi, g) in groups.iter().enumerate() {
                per_group.insert(g.clone(), ScalerParams::fit(train.group_series(gi))?);
            }
            TargetScaler::PerGroup(per_group)
        } else {
            TargetScaler::Global(train.fit_target_scaler()?)
        };

        let scaled: Vec<Vec<f64>> = groups
            .iter()
            .enumerate()
            .map(|(gi, g)| -> Result<Vec<f64>> {
                let p = scaler.params(g)?;
                Ok(train.group_series(gi).iter().map(|y| p.apply(*y)).collect())
            })
            .collect::<Result<_>>()?;

        // One row per (group, time), group-major and time-ascending, so the
        // row for (gi, t) sits at gi * n_t + t.
        let include_code = config.include_group_feature;
        let width = usize::from(include_code) + config.n_lags + train.n_exog();
        let mut rows = Matrix::new(width);
        let mut row_targets = Vec::with_capacity(groups.len() * n_t);
        for (gi, series) in scaled.iter().enumerate() {
            for t in 0..n_t {
                let lags =
                    (1..=config.n_lags).map(|back| {
                        if t >= back {
                            series[t - back]
                        } else {
                            0.0
                        }
                    });
                rows.push_row(&point_features(gi, include_code, config.n_lags, lags, train.exog_row(gi, t)))?;
                row_targets.push(series[t]);
            }
        }

        let mut fold_of = vec![0usize; groups.len()];
        if config.n_folds > 1 {
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.shuffle(&mut stream_rng(config.seed, "folds", 0));
            let base = groups.len() / config.n_folds;
            let extra = groups.len() % config.n_folds;
            let mut pos = 0;
            for f in 0..config.n_folds {
                for _ in 0..base + usize::from(f < extra) {
                    fold_of[order[pos]] = f;
                    pos += 1;
                }
            }
        }

        let mut point_ensemble = Vec::with_capacity(config.n_folds);
        for f in 0..config.n_folds {
            let params = config.point_forest.clone().with_seed(stream_seed(config.seed, "point_fold", f as u64));
            let forest = if config.n_folds == 1 {
                QuantileForest::fit(&rows, &row_targets, &params)?
            } else {
                let mut fold_rows = Matrix::new(width);
                let mut fold_targets = Vec::new();
                for (gi, _) in groups.iter().enumerate() {
                    if fold_of[gi] == f {
                        continue;
                    }
                    for t in 0..n_t {
                        fold_rows.push_row(rows.row(gi * n_t + t))?;
                        fold_targets.push(row_targets[gi * n_t + t]);
                    }
                }
                QuantileForest::fit(&fold_rows, &fold_targets, &params)?
            };
            point_ensemble.push(forest);
        }

        // Each group's residuals come from the one fold forest that
        // excluded it. Full-ensemble residuals shrink toward zero on rows
        // the forests memorized and drag coverage down a few points in
        // either deployment mode; the held-out stream prices prediction
        // error honestly. With a single fold there is no held-out forest
        // and the residuals are in-sample.
        let mut state = ResidualState::new(config.window, config.gamma, include_code)?;
        let mut last_values = BTreeMap::new();
        for (gi, g) in groups.iter().enumerate() {
            state.register_group(g, gi)?;
            let holdout = &point_ensemble[fold_of[gi]];
            for t in 0..n_t {
                let x = rows.row(gi * n_t + t);
                state.append(g, row_targets[gi * n_t + t] - holdout.predict_mean(x)?)?;
            }
            let tail_start = n_t.saturating_sub(config.n_lags);
            last_values.insert(g.clone(), scaled[gi][tail_start..].to_vec());
        }

        let (qrf_rows, qrf_targets) = state.training_matrix_all()?;
        let qrf_params = config.qrf_forest.clone().with_seed(stream_seed(config.seed, "qrf", 0));
        let qrf = QuantileForest::fit(&qrf_rows, &qrf_targets, &qrf_params)?;

        Ok(Self {
            config: config.clone(),
            encoder,
            scaler,
            point_ensemble,
            qrf,
            state,
            last_values,
            active_groups: groups,
            train_times: train.times().to_vec(),
            next_time: train.times().last().copied().expect("panel has times") + 1,
            steps_taken: 0,
            retrain_count: 0,
            n_exog: train.n_exog(),
        })
    }

    pub fn config(&self) -> &LpciConfig {
        &self.config
    }

    /// Groups the next step must observe, sorted by name.
    pub fn active_groups(&self) -> &[String] {
        &self.active_groups
    }

    pub fn next_time(&self) -> i64 {
        self.next_time
    }

    /// Quantile-forest refits performed since the initial fit.
    pub fn retrains(&self) -> usize {
        self.retrain_count
    }

    /// Training-target standard deviation, when one pooled scale applies
    /// to every group; feeds scale-free width reporting.
    pub fn target_scale(&self) -> Option<f64> {
        self.scaler.global_std()
    }

    fn predict_scaled(&self, group: &str, exog: &[f64]) -> Result<(PredictedInterval, f64)> {
        let code = self
            .encoder
            .code(group)
            .ok_or_else(|| LpciError::State(format!("group {group} is not known to the model")))?;
        if exog.len() != self.n_exog {
            return Err(LpciError::Argument(format!(
                "group {group} got {} exogenous features, model expects {}",
                exog.len(),
                self.n_exog
            )));
        }
        let history = self
            .last_values
            .get(group)
            .ok_or_else(|| LpciError::State(format!("no value history for group {group}")))?;
        let lags = (1..=self.config.n_lags).map(|back| {
            if history.len() >= back {
                history[history.len() - back]
            } else {
                0.0
            }
        });
        let x_point =
            point_features(code, self.config.include_group_feature, self.config.n_lags, lags, exog);
        let mut y_hat = 0.0;
        for forest in &self.point_ensemble {
            y_hat += forest.predict_mean(&x_point)?;
        }
        y_hat /= self.point_ensemble.len() as f64;

        let x_qrf = self.state.prediction_features(group)?;
        let dist = self.qrf.distribution(&x_qrf)?;
        let alpha = self.config.alpha;
        let beta = optimize_beta(|p| dist.quantile(p), alpha, self.config.beta_grid_size);
        let lower_scaled = y_hat + dist.quantile(beta);
        let upper_scaled = y_hat + dist.quantile(1.0 - alpha + beta);

        let interval = PredictedInterval {
            group: group.to_owned(),
            time: self.next_time,
            y_pred: self.scaler.invert(group, y_hat)?,
            lower: self.scaler.invert(group, lower_scaled)?,
            upper: self.scaler.invert(group, upper_scaled)?,
            beta,
        };
        Ok((interval, y_hat))
    }

    /// Interval for one group at the model's current time, without
    /// advancing it.
    pub fn predict_interval(&self, group: &str, exog: &[f64]) -> Result<PredictedInterval> {
        Ok(self.predict_scaled(group, exog)?.0)
    }

    /// One online step without exogenous features.
    pub fn step(&mut self, observations: &BTreeMap<String, f64>) -> Result<Vec<IntervalRecord>> {
        self.step_with_exog(observations, &BTreeMap::new())
    }

    /// One online step: intervals for every active group at the current
    /// time, then truths revealed, residuals absorbed, and the quantile
    /// forest refit when the step count hits the retrain period.
    pub fn step_with_exog(
        &mut self,
        observations: &BTreeMap<String, f64>,
        exog: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Vec<IntervalRecord>> {
        if observations.len() != self.active_groups.len()
            || !self.active_groups.iter().all(|g| observations.contains_key(g))
        {
            return Err(LpciError::Argument(format!(
                "observations must cover exactly the {} active groups",
                self.active_groups.len()
            )));
        }
        let empty: &[f64] = &[];
        let exog_of = |g: &str| -> Result<&[f64]> {
            match exog.get(g) {
                Some(x) => Ok(x.as_slice()),
                None if self.n_exog == 0 => Ok(empty),
                None => Err(LpciError::Argument(format!("missing exogenous features for group {g}"))),
            }
        };

        // Predictions are independent reads against the pre-step state.
        #[cfg(feature = "parallel")]
        let predictions: Vec<(PredictedInterval, f64)> = self
            .active_groups
            .par_iter()
            .map(|g| self.predict_scaled(g, exog_of(g)?))
            .collect::<Result<_>>()?;
        #[cfg(not(feature = "parallel"))]
        let predictions: Vec<(PredictedInterval, f64)> = self
            .active_groups
            .iter()
            .map(|g| self.predict_scaled(g, exog_of(g)?))
            .collect::<Result<_>>()?;

        let mut records = Vec::with_capacity(predictions.len());
        for (interval, y_hat_scaled) in predictions {
            let y_true = observations[&interval.group];
            let y_scaled = self.scaler.scale(&interval.group, y_true)?;
            self.state.append(&interval.group, y_scaled - y_hat_scaled)?;
            let history = self
                .last_values
                .get_mut(&interval.group)
                .expect("active group has a value history");
            history.push(y_scaled);
            if history.len() > self.config.n_lags {
                history.remove(0);
            }
            records.push(IntervalRecord::from_prediction(&interval, y_true));
        }

        self.steps_taken += 1;
        if self.steps_taken % self.config.retrain_every == 0 {
            self.retrain_count += 1;
            let (rows, targets) = self.state.training_matrix_all()?;
            let params = self
                .config
                .qrf_forest
                .clone()
                .with_seed(stream_seed(self.config.seed, "qrf", self.retrain_count as u64));
            self.qrf = QuantileForest::fit(&rows, &targets, &params)?;
        }
        self.next_time += 1;
        Ok(records)
    }

    /// Evaluates unseen groups over the training time range. Each test
    /// group starts from a window of dummy zero residuals, so intervals
    /// exist (finite) from the first step.
    pub fn run_cross_sectional(&mut self, test: &PanelDataset) -> Result<Vec<IntervalRecord>> {
        if matches!(self.scaler, TargetScaler::PerGroup(_)) {
            return Err(LpciError::Mode(
                "cross-sectional evaluation needs pooled scaling; unseen groups have no fitted scale"
                    .into(),
            ));
        }
        if test.times() != self.train_times {
            return Err(LpciError::Argument(
                "cross-sectional test panel must cover exactly the training times".into(),
            ));
        }
        if test.n_exog() != self.n_exog {
            return Err(LpciError::Argument(format!(
                "test panel has {} exogenous features, model expects {}",
                test.n_exog(),
                self.n_exog
            )));
        }
        if let Some(g) = test.groups().iter().find(|g| self.encoder.contains(g)) {
            return Err(LpciError::Argument(format!(
                "test group {g} overlaps the training groups"
            )));
        }
        self.encoder.extend(test.groups())?;
        for g in test.groups() {
            let code = self.encoder.code(g).expect("just extended");
            self.state.register_group(g, code)?;
            self.state.seed_dummy_residuals(g, self.config.window)?;
            self.last_values.insert(g.clone(), Vec::new());
        }
        self.active_groups = test.groups().to_vec();
        self.next_time = test.times()[0];
        self.steps_taken = 0;
        self.run_over(test)
    }

    /// Evaluates the training groups over times following the training
    /// range; histories carry over, no dummy seeding.
    pub fn run_longitudinal(&mut self, test: &PanelDataset) -> Result<Vec<IntervalRecord>> {
        if test.groups() != self.active_groups {
            return Err(LpciError::Argument(
                "longitudinal test panel must cover exactly the training groups".into(),
            ));
        }
        if test.n_exog() != self.n_exog {
            return Err(LpciError::Argument(format!(
                "test panel has {} exogenous features, model expects {}",
                test.n_exog(),
                self.n_exog
            )));
        }
        if test.times()[0] != self.next_time {
            return Err(LpciError::Argument(format!(
                "test times must start at {}, got {}",
                self.next_time,
                test.times()[0]
            )));
        }
        self.run_over(test)
    }

    fn run_over(&mut self, test: &PanelDataset) -> Result<Vec<IntervalRecord>> {
        let mut records = Vec::with_capacity(test.n_groups() * test.n_times());
        for ti in 0..test.n_times() {
            let mut observations = BTreeMap::new();
            let mut exog = BTreeMap::new();
            for (gi, g) in test.groups().iter().enumerate() {
                observations.insert(g.clone(), test.value(gi, ti));
                if test.n_exog() > 0 {
                    exog.insert(g.clone(), test.exog_row(gi, ti).to_vec());
                }
            }
            records.extend(self.step_with_exog(&observations, &exog)?);
        }
        Ok(records)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}
