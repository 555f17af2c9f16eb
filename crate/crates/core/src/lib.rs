//! Distribution-free prediction intervals for balanced panels.
//!
//! The pipeline: fit a point predictor on training panels, turn its
//! one-step-ahead errors per group into exponentially weighted summaries,
//! train a quantile forest that maps a window of those summaries (plus a
//! group code) to the conditional error distribution, and read interval
//! endpoints off its quantiles with a width-minimizing offset. The model
//! runs online: predict, observe, absorb the new error, refit the quantile
//! forest on schedule.

pub mod baselines;
pub mod engine;
pub mod error;
pub mod forest;
pub mod matrix;
pub mod metrics;
pub mod panel;
pub mod records;
pub mod residuals;
pub mod seeding;
pub mod synth;

pub use baselines::{cqr, spci_per_group, split_conformal, BaselineConfig, BaselineMethod};
pub use engine::{optimize_beta, LpciConfig, LpciModel, Mode};
pub use error::{LpciError, Result};
pub use forest::{ForestParams, QuantileForest, Tree, TreeNode, WeightVector, WeightedDistribution};
pub use matrix::Matrix;
pub use panel::{
    make_supervised, CsvSchema, GroupEncoder, Observation, PanelDataset, ScalerParams,
    SupervisedPanel, SupervisedRow,
};
pub use metrics::{
    filter_last_k, marginal_coverage, per_group_coverage, tail_coverage, width_stats,
    CoverageReport, WidthStats,
};
pub use records::{
    read_records_csv, records_to_csv_bytes, write_records_csv, IntervalRecord, PredictedInterval,
};
pub use residuals::{compute_residuals, ew_mean_series, ResidualState};
pub use synth::{generate_synthetic, synthetic_group_params, SyntheticSpec};
