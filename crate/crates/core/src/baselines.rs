//! Comparison interval methods emitting the same record schema as the
//! engine: split conformal around a forest point predictor, conformalized
//! quantile regression, and the engine run independently per group.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{LpciConfig, LpciModel, Mode};
use crate::error::{LpciError, Result};
use crate::forest::{ForestParams, QuantileForest};
use crate::matrix::Matrix;
use crate::panel::{GroupEncoder, PanelDataset, ScalerParams};
use crate::records::IntervalRecord;
use crate::seeding::{stream_rng, stream_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Split,
    Cqr,
    SpciPerGroup,
}

/// Settings for the conformal baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Nominal miscoverage level.
    pub alpha: f64,
    /// Share of the training panel held out for calibration: groups in
    /// cross-sectional mode (default 0.5), trailing times in longitudinal
    /// mode (default 0.25).
    pub calibration_fraction: Option<f64>,
    pub forest: ForestParams,
    /// Lagged-target features for the underlying forest.
    pub n_lags: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            method: BaselineMethod::Split,
            alpha: 0.1,
            calibration_fraction: None,
            forest: ForestParams::default(),
            n_lags: 1,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(LpciError::Config(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if let Some(frac) = self.calibration_fraction {
            if !(0.0 < frac && frac < 1.0) {
                return Err(LpciError::Config(format!(
                    "calibration_fraction must be in (0,1), got {frac}"
                )));
            }
        }
        if self.n_lags == 0 {
            return Err(LpciError::Config("n_lags must be at least 1".into()));
        }
        Ok(())
    }
}

/// Index of the (n+1)(1-alpha) order statistic, rounded up, 1-based.
/// The epsilon guards against 0.8999... artifacts when the product is an
/// exact integer.
fn conformal_rank(n_cal: usize, alpha: f64) -> Result<usize> {
    let k = (((n_cal + 1) as f64) * (1.0 - alpha) - 1e-9).ceil() as usize;
    if k > n_cal {
        return Err(LpciError::CalibrationTooSmall(format!(
            "rank {k} exceeds the {n_cal} calibration points; lower alpha or enlarge calibration"
        )));
    }
    Ok(k.max(1))
}

/// k-th smallest value, 1-based.
fn kth_smallest(mut values: Vec<f64>, k: usize) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values[k - 1]
}

/// One feature row: group code, lagged scaled targets most recent first
/// (zero before the series start), then exogenous features.
fn lagged_row(code: usize, n_lags: usize, context: &[f64], t_pos: usize, exog: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(1 + n_lags + exog.len());
    x.push(code as f64);
    for back in 1..=n_lags {
        x.push(if t_pos >= back { context[t_pos - back] } else { 0.0 });
    }
    x.extend_from_slice(exog);
    x
}

/// Forest fit on the proper-train slice plus aligned calibration and test
/// rows, shared by the split and CQR constructions.
struct SharedFit {
    forest: QuantileForest,
    cal_rows: Matrix,
    /// Scaled truths aligned with cal_rows.
    cal_targets: Vec<f64>,
    test_rows: Matrix,
    /// (group, time, raw truth) aligned with test_rows.
    test_meta: Vec<(String, i64, f64)>,
    scaler: ScalerParams,
}

fn validate_panels(train: &PanelDataset, test: &PanelDataset, mode: Mode) -> Result<()> {
    if test.n_exog() != train.n_exog() {
        return Err(LpciError::Argument(format!(
            "test panel has {} exogenous features, train has {}",
            test.n_exog(),
            train.n_exog()
        )));
    }
    match mode {
        Mode::CrossSectional => {
            if test.times() != train.times() {
                return Err(LpciError::Argument(
                    "cross-sectional test panel must cover exactly the training times".into(),
                ));
            }
            if let Some(g) = test.groups().iter().find(|g| train.group_index(g).is_some()) {
                return Err(LpciError::Argument(format!(
                    "test group {g} overlaps the training groups"
                )));
            }
        }
        Mode::Longitudinal => {
            if test.groups() != train.groups() {
                return Err(LpciError::Argument(
                    "longitudinal test panel must cover exactly the training groups".into(),
                ));
            }
            let expected = train.times().last().copied().expect("panel has times") + 1;
            if test.times()[0] != expected {
                return Err(LpciError::Argument(format!(
                    "test times must start at {expected}, got {}",
                    test.times()[0]
                )));
            }
        }
    }
    Ok(())
}

fn prepare(
    train: &PanelDataset,
    test: &PanelDataset,
    mode: Mode,
    config: &BaselineConfig,
) -> Result<SharedFit> {
    config.validate()?;
    validate_panels(train, test, mode)?;
    let scaler = train.fit_target_scaler()?;
    let n_lags = config.n_lags;
    let n_t = train.n_times();
    let width = 1 + n_lags + train.n_exog();
    let mut encoder = GroupEncoder::fit(train.groups());

    let scale_series =
        |panel: &PanelDataset, gi: usize| -> Vec<f64> {
            panel.group_series(gi).iter().map(|y| scaler.apply(*y)).collect()
        };

    let mut proper_rows = Matrix::new(width);
    let mut proper_targets = Vec::new();
    let mut cal_rows = Matrix::new(width);
    let mut cal_targets = Vec::new();
    let mut test_rows = Matrix::new(width);
    let mut test_meta = Vec::new();

    match mode {
        Mode::CrossSectional => {
            let n_groups = train.n_groups();
            let frac = config.calibration_fraction.unwrap_or(0.5);
            let n_cal = (frac * n_groups as f64).round() as usize;
            if n_cal == 0 || n_cal >= n_groups {
                return Err(LpciError::Config(format!(
                    "calibration fraction {frac} leaves {n_cal} of {n_groups} groups for calibration"
                )));
            }
            let mut order: Vec<usize> = (0..n_groups).collect();
            order.shuffle(&mut stream_rng(config.seed, "calibration_split", 0));
            let cal_set: BTreeSet<usize> = order[..n_cal].iter().copied().collect();

            for gi in 0..n_groups {
                let code = encoder.code(&train.groups()[gi]).expect("training group");
                let series = scale_series(train, gi);
                let (rows, targets) = if cal_set.contains(&gi) {
                    (&mut cal_rows, &mut cal_targets)
                } else {
                    (&mut proper_rows, &mut proper_targets)
                };
                for t in 0..n_t {
                    rows.push_row(&lagged_row(code, n_lags, &series, t, train.exog_row(gi, t)))?;
                    targets.push(series[t]);
                }
            }

            encoder.extend(test.groups())?;
            for (gi, g) in test.groups().iter().enumerate() {
                let code = encoder.code(g).expect("just extended");
                let series = scale_series(test, gi);
                for t in 0..test.n_times() {
                    test_rows.push_row(&lagged_row(code, n_lags, &series, t, test.exog_row(gi, t)))?;
                    test_meta.push((g.clone(), test.times()[t], test.value(gi, t)));
                }
            }
        }
        Mode::Longitudinal => {
            let frac = config.calibration_fraction.unwrap_or(0.25);
            let n_cal_t = (frac * n_t as f64).round() as usize;
            if n_cal_t == 0 || n_cal_t >= n_t {
                return Err(LpciError::Config(format!(
                    "calibration fraction {frac} leaves {n_cal_t} of {n_t} times for calibration"
                )));
            }
            let cut = n_t - n_cal_t;
            for (gi, g) in train.groups().iter().enumerate() {
                let code = encoder.code(g).expect("training group");
                // One continuous context: train series then observed test
                // values, so late rows see real (not zero) lags.
                let mut context = scale_series(train, gi);
                context.extend(scale_series(test, gi));
                for t in 0..cut {
                    proper_rows
                        .push_row(&lagged_row(code, n_lags, &context, t, train.exog_row(gi, t)))?;
                    proper_targets.push(context[t]);
                }
                for t in cut..n_t {
                    cal_rows.push_row(&lagged_row(code, n_lags, &context, t, train.exog_row(gi, t)))?;
                    cal_targets.push(context[t]);
                }
                for ti in 0..test.n_times() {
                    test_rows.push_row(&lagged_row(
                        code,
                        n_lags,
                        &context,
                        n_t + ti,
                        test.exog_row(gi, ti),
                    ))?;
                    test_meta.push((g.clone(), test.times()[ti], test.value(gi, ti)));
                }
            }
        }
    }

    let params = config.forest.clone().with_seed(stream_seed(config.seed, "forest", 0));
    let forest = QuantileForest::fit(&proper_rows, &proper_targets, &params)?;
    Ok(SharedFit { forest, cal_rows, cal_targets, test_rows, test_meta, scaler })
}

/// Split conformal: forest on the proper-train slice, absolute calibration
/// residuals, intervals of constant width around the point prediction.
pub fn split_conformal(
    train: &PanelDataset,
    test: &PanelDataset,
    mode: Mode,
    config: &BaselineConfig,
) -> Result<Vec<IntervalRecord>> {
    let prep = prepare(train, test, mode, config)?;
    let mut abs_residuals = Vec::with_capacity(prep.cal_targets.len());
    for (i, y) in prep.cal_targets.iter().enumerate() {
        let pred = prep.forest.predict_mean(prep.cal_rows.row(i))?;
        abs_residuals.push((y - pred).abs());
    }
    let k = conformal_rank(abs_residuals.len(), config.alpha)?;
    let q_hat = kth_smallest(abs_residuals, k);

    let mut records = Vec::with_capacity(prep.test_meta.len());
    for (i, (group, time, y_true)) in prep.test_meta.iter().enumerate() {
        let y_hat = prep.forest.predict_mean(prep.test_rows.row(i))?;
        let lower = prep.scaler.invert(y_hat - q_hat);
        let upper = prep.scaler.invert(y_hat + q_hat);
        records.push(IntervalRecord {
            group: group.clone(),
            time: *time,
            y_true: *y_true,
            y_pred: prep.scaler.invert(y_hat),
            lower,
            upper,
            beta: 0.0,
            covered: lower <= *y_true && *y_true <= upper,
        });
    }
    Ok(records)
}

/// Conformalized quantile regression: forest quantile estimates at
/// alpha/2 and 1-alpha/2, calibrated by the order statistic of the
/// conformity scores max(lo - y, y - hi). The correction may be negative
/// (intervals shrink when the raw quantiles overcover).
pub fn cqr(
    train: &PanelDataset,
    test: &PanelDataset,
    mode: Mode,
    config: &BaselineConfig,
) -> Result<Vec<IntervalRecord>> {
    let prep = prepare(train, test, mode, config)?;
    let lo_p = config.alpha / 2.0;
    let hi_p = 1.0 - config.alpha / 2.0;
    let mut scores = Vec::with_capacity(prep.cal_targets.len());
    for (i, y) in prep.cal_targets.iter().enumerate() {
        let dist = prep.forest.distribution(prep.cal_rows.row(i))?;
        let lo = dist.quantile(lo_p);
        let hi = dist.quantile(hi_p);
        scores.push((lo - y).max(y - hi));
    }
    let k = conformal_rank(scores.len(), config.alpha)?;
    let correction = kth_smallest(scores, k);

    let mut records = Vec::with_capacity(prep.test_meta.len());
    for (i, (group, time, y_true)) in prep.test_meta.iter().enumerate() {
        let x = prep.test_rows.row(i);
        let dist = prep.forest.distribution(x)?;
        let mut lo = dist.quantile(lo_p) - correction;
        let mut hi = dist.quantile(hi_p) + correction;
        if lo > hi {
            // A negative correction can cross the estimates; collapse to
            // the midpoint rather than emit an inverted interval.
            let mid = (lo + hi) / 2.0;
            lo = mid;
            hi = mid;
        }
        let lower = prep.scaler.invert(lo);
        let upper = prep.scaler.invert(hi);
        records.push(IntervalRecord {
            group: group.clone(),
            time: *time,
            y_true: *y_true,
            y_pred: prep.scaler.invert(prep.forest.predict_mean(x)?),
            lower,
            upper,
            beta: 0.0,
            covered: lower <= *y_true && *y_true <= upper,
        });
    }
    Ok(records)
}

/// Runs the interval engine on each group's series alone: no group code
/// feature, single point forest, window clamped so each per-group training
/// matrix keeps at least one row. Longitudinal mode only.
pub fn spci_per_group(
    train: &PanelDataset,
    test: &PanelDataset,
    config: &LpciConfig,
) -> Result<Vec<IntervalRecord>> {
    config.validate()?;
    if test.groups() != train.groups() {
        return Err(LpciError::Mode(
            "per-group evaluation needs the same groups in train and test".into(),
        ));
    }
    let run_group = |(gi, group): (usize, &String)| -> Result<Vec<IntervalRecord>> {
        let names = vec![group.clone()];
        let train_one = train.subset_groups(&names)?;
        let test_one = test.subset_groups(&names)?;
        // A lone series is far smaller than the pooled panel the configured
        // forests expect, so the window and both leaf floors are clamped to
        // what the series can carry. Starved quantile forests collapse to
        // single-leaf trees, i.e. plain empirical residual quantiles.
        let window = config.window.min(train.n_times() / 2).max(1);
        let mut point_forest = config.point_forest.clone();
        point_forest.min_leaf_size = point_forest.min_leaf_size.min(train.n_times()).max(1);
        let mut qrf_forest = config.qrf_forest.clone();
        qrf_forest.min_leaf_size = qrf_forest.min_leaf_size.min(train.n_times() - window).max(1);
        let inner = LpciConfig {
            include_group_feature: false,
            per_group_scaling: false,
            n_folds: 1,
            window,
            point_forest,
            qrf_forest,
            seed: stream_seed(config.seed, "spci_group", gi as u64),
            ..config.clone()
        };
        let mut model = LpciModel::fit(&train_one, &inner)?;
        model.run_longitudinal(&test_one)
    };
    #[cfg(feature = "parallel")]
    let per_group: Vec<Vec<IntervalRecord>> = train
        .groups()
        .par_iter()
        .enumerate()
        .map(run_group)
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let per_group: Vec<Vec<IntervalRecord>> =
        train.groups().iter().enumerate().map(run_group).collect::<Result<_>>()?;
    Ok(per_group.into_iter().flatten().collect())
}
