//! Interval records and their CSV serialization.
//!
//! Every method emits the same record schema, so coverage metrics and
//! reports are method-agnostic.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Interval for one (group, time) before the truth is observed.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedInterval {
    pub group: String,
    pub time: i64,
    pub y_pred: f64,
    pub lower: f64,
    pub upper: f64,
    pub beta: f64,
}

/// One scored prediction: interval, truth, and the covered flag.
///
/// Invariants: lower <= upper with finite width; covered is exactly
/// lower <= y_true <= upper. Field order fixes the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub group: String,
    pub time: i64,
    pub y_true: f64,
    pub y_pred: f64,
    pub lower: f64,
    pub upper: f64,
    pub beta: f64,
    pub covered: bool,
}

impl IntervalRecord {
    /// Closes a prediction with the observed truth.
    pub fn from_prediction(p: &PredictedInterval, y_true: f64) -> Self {
        Self {
            group: p.group.clone(),
            time: p.time,
            y_true,
            y_pred: p.y_pred,
            lower: p.lower,
            upper: p.upper,
            beta: p.beta,
            covered: p.lower <= y_true && y_true <= p.upper,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Serializes records to CSV bytes (header + one line per record).
pub fn records_to_csv_bytes(records: &[IntervalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    Ok(w.into_inner().expect("flushing an in-memory writer cannot fail"))
}

pub fn write_records_csv(path: &Path, records: &[IntervalRecord]) -> Result<()> {
    std::fs::write(path, records_to_csv_bytes(records)?)?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<IntervalRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
