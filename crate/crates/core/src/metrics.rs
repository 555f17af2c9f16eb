//! Coverage and width summaries over interval records.
//!
//! All metrics are pure functions of the record list and invariant to its
//! order. Width dispersion uses the population standard deviation
//! (divisor n) so independently computed values match exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LpciError, Result};
use crate::records::IntervalRecord;

/// Fraction of records whose interval contains the truth.
pub fn marginal_coverage(records: &[IntervalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(LpciError::Argument("no records to score".into()));
    }
    let covered = records.iter().filter(|r| r.covered).count();
    Ok(covered as f64 / records.len() as f64)
}

/// Coverage within each group, keyed by group name.
pub fn per_group_coverage(records: &[IntervalRecord]) -> Result<BTreeMap<String, f64>> {
    if records.is_empty() {
        return Err(LpciError::Argument("no records to score".into()));
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        let entry = counts.entry(&r.group).or_insert((0, 0));
        entry.0 += usize::from(r.covered);
        entry.1 += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(g, (covered, total))| (g.to_owned(), covered as f64 / total as f64))
        .collect())
}

/// Mean coverage over the worst-covered ceil(tail_fraction * |G|) groups
/// (at least one). Group name breaks coverage ties so the selection is
/// deterministic.
pub fn tail_coverage(records: &[IntervalRecord], tail_fraction: f64) -> Result<f64> {
    if !(0.0 < tail_fraction && tail_fraction <= 1.0) {
        return Err(LpciError::Argument(format!(
            "tail_fraction must be in (0,1], got {tail_fraction}"
        )));
    }
    let per_group = per_group_coverage(records)?;
    let mut coverages: Vec<(f64, &String)> = per_group.iter().map(|(g, c)| (*c, g)).collect();
    coverages.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    // The epsilon keeps exact products like 0.1 * 10 from ceiling upward.
    let n_tail = ((tail_fraction * coverages.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let n_tail = n_tail.min(coverages.len());
    Ok(coverages[..n_tail].iter().map(|(c, _)| c).sum::<f64>() / n_tail as f64)
}

/// Pooled width moments: mean, population std, and their ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthStats {
    pub mean: f64,
    pub std: f64,
    pub cov: f64,
}

pub fn width_stats(records: &[IntervalRecord]) -> Result<WidthStats> {
    if records.is_empty() {
        return Err(LpciError::Argument("no records to score".into()));
    }
    // Summing in sorted order makes the statistics exactly permutation
    // invariant, not merely up to float reassociation.
    let mut widths: Vec<f64> = records.iter().map(IntervalRecord::width).collect();
    widths.sort_unstable_by(f64::total_cmp);
    let n = widths.len() as f64;
    let mean = widths.iter().sum::<f64>() / n;
    let var = widths.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if mean == 0.0 {
        return Err(LpciError::Argument(
            "all widths are zero; width dispersion over mean is undefined".into(),
        ));
    }
    Ok(WidthStats { mean, std, cov: std / mean })
}

/// Keeps, per group, the records at the k largest times; output sorted by
/// (group, time).
pub fn filter_last_k(records: &[IntervalRecord], k: usize) -> Vec<IntervalRecord> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.group.cmp(&b.group).then(a.time.cmp(&b.time)));
    let mut out = Vec::with_capacity(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].group == sorted[i].group {
            j += 1;
        }
        let take = k.min(j - i);
        out.extend_from_slice(&sorted[j - take..j]);
        i = j;
    }
    out
}

/// Full evaluation summary for one record stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub marginal_coverage: f64,
    pub tail_coverage: f64,
    pub tail_fraction: f64,
    pub width_mean: f64,
    pub width_std: f64,
    pub width_cov: f64,
    /// Width moments divided by the training-target scale, when one
    /// uniform scale applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaled_width_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaled_width_std: Option<f64>,
    pub n_records: usize,
    /// Which records were scored (such as a trailing-time filter).
    pub filter: String,
    pub per_group_coverage: BTreeMap<String, f64>,
}

impl CoverageReport {
    pub fn from_records(
        records: &[IntervalRecord],
        tail_fraction: f64,
        filter: &str,
    ) -> Result<Self> {
        let widths = width_stats(records)?;
        Ok(Self {
            marginal_coverage: marginal_coverage(records)?,
            tail_coverage: tail_coverage(records, tail_fraction)?,
            tail_fraction,
            width_mean: widths.mean,
            width_std: widths.std,
            width_cov: widths.cov,
            scaled_width_mean: None,
            scaled_width_std: None,
            n_records: records.len(),
            filter: filter.to_owned(),
            per_group_coverage: per_group_coverage(records)?,
        })
    }

    /// Adds width moments expressed in training-scale units.
    pub fn attach_scaled_widths(&mut self, target_std: f64) -> Result<()> {
        if target_std <= 0.0 || !target_std.is_finite() {
            return Err(LpciError::Argument(format!(
                "target scale must be positive and finite, got {target_std}"
            )));
        }
        self.scaled_width_mean = Some(self.width_mean / target_std);
        self.scaled_width_std = Some(self.width_std / target_std);
        Ok(())
    }

    /// Aligned two-column text rendering for terminal output.
    pub fn to_text_table(&self) -> String {
        let mut lines = vec![
            format!("{:<22} {:>10}", "records", self.n_records),
            format!("{:<22} {:>10}", "filter", self.filter),
            format!("{:<22} {:>10.4}", "marginal coverage", self.marginal_coverage),
            format!(
                "{:<22} {:>10.4}",
                format!("tail coverage ({:.0}%)", self.tail_fraction * 100.0),
                self.tail_coverage
            ),
            format!("{:<22} {:>10.4}", "width mean", self.width_mean),
            format!("{:<22} {:>10.4}", "width std", self.width_std),
            format!("{:<22} {:>10.4}", "width cov", self.width_cov),
        ];
        if let (Some(m), Some(s)) = (self.scaled_width_mean, self.scaled_width_std) {
            lines.push(format!("{:<22} {:>10.4}", "scaled width mean", m));
            lines.push(format!("{:<22} {:>10.4}", "scaled width std", s));
        }
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(group: &str, time: i64, covered: bool, width: f64) -> IntervalRecord {
        IntervalRecord {
            group: group.to_owned(),
            time,
            y_true: 0.0,
            y_pred: 0.0,
            lower: if covered { -width / 2.0 } else { 1.0 },
            upper: if covered { width / 2.0 } else { 1.0 + width },
            beta: 0.0,
            covered,
        }
    }

    #[test]
    fn marginal_coverage_counts_covered_records() {
        let mut records: Vec<IntervalRecord> =
            (0..9).map(|i| record("g", i, true, 1.0)).collect();
        records.push(record("g", 9, false, 1.0));
        assert_eq!(marginal_coverage(&records).unwrap(), 0.9);
        assert_eq!(marginal_coverage(&records[..9]).unwrap(), 1.0);
        assert!(marginal_coverage(&[]).is_err());
    }

    #[test]
    fn tail_coverage_takes_the_worst_decile() {
        // 10 groups: one at 0.5, nine at 1.0.
        let mut records = Vec::new();
        for g in 0..10 {
            for t in 0..2 {
                let covered = g != 0 || t != 0;
                records.push(record(&format!("g{g}"), t, covered, 1.0));
            }
        }
        assert_eq!(tail_coverage(&records, 0.1).unwrap(), 0.5);
        // All groups equal: tail equals the common value.
        let uniform: Vec<IntervalRecord> = (0..10)
            .flat_map(|g| (0..4).map(move |t| (g, t)))
            .map(|(g, t)| record(&format!("g{g}"), t, t < 3, 1.0))
            .collect();
        assert_eq!(tail_coverage(&uniform, 0.1).unwrap(), 0.75);
        assert_eq!(tail_coverage(&uniform, 1.0).unwrap(), 0.75);
    }

    #[test]
    fn tail_never_exceeds_marginal_on_balanced_groups() {
        let records: Vec<IntervalRecord> = (0..30)
            .flat_map(|g| (0..5).map(move |t| (g, t)))
            .map(|(g, t)| record(&format!("g{g:02}"), t, (g + t) % 3 != 0, 1.0))
            .collect();
        let marginal = marginal_coverage(&records).unwrap();
        for frac in [0.1, 0.25, 0.5, 1.0] {
            assert!(tail_coverage(&records, frac).unwrap() <= marginal + 1e-12);
        }
    }

    #[test]
    fn width_stats_match_hand_computations() {
        let records = vec![record("a", 0, true, 1.0), record("a", 1, true, 3.0)];
        let stats = width_stats(&records).unwrap();
        assert_eq!(stats.mean, 2.0);
        assert_eq!(stats.std, 1.0);
        assert_eq!(stats.cov, 0.5);

        let constant = vec![record("a", 0, true, 2.0), record("a", 1, true, 2.0)];
        let stats = width_stats(&constant).unwrap();
        assert_eq!((stats.mean, stats.std, stats.cov), (2.0, 0.0, 0.0));

        let degenerate = vec![record("a", 0, true, 0.0)];
        assert!(width_stats(&degenerate).is_err());
    }

    #[test]
    fn filter_keeps_the_last_k_times_per_group() {
        let mut records = Vec::new();
        for g in 0..3 {
            for t in 1..=30 {
                records.push(record(&format!("g{g}"), t, true, 1.0));
            }
        }
        let kept = filter_last_k(&records, 20);
        assert_eq!(kept.len(), 3 * 20);
        assert!(kept.iter().all(|r| r.time >= 11 && r.time <= 30));
        let all = filter_last_k(&records, 50);
        assert_eq!(all.len(), records.len());
    }

    #[test]
    fn filter_handles_unequal_group_lengths() {
        let mut records = vec![record("a", 1, true, 1.0)];
        for t in 1..=5 {
            records.push(record("b", t, true, 1.0));
        }
        let kept = filter_last_k(&records, 3);
        assert_eq!(kept.iter().filter(|r| r.group == "a").count(), 1);
        let b_times: Vec<i64> =
            kept.iter().filter(|r| r.group == "b").map(|r| r.time).collect();
        assert_eq!(b_times, vec![3, 4, 5]);
    }

    #[test]
    fn metrics_ignore_record_order() {
        let mut records: Vec<IntervalRecord> = (0..40)
            .map(|i| record(&format!("g{}", i % 8), i / 8, i % 5 != 0, 1.0 + (i % 3) as f64))
            .collect();
        let marginal = marginal_coverage(&records).unwrap();
        let tail = tail_coverage(&records, 0.25).unwrap();
        let widths = width_stats(&records).unwrap();
        records.reverse();
        records.swap(3, 17);
        assert_eq!(marginal_coverage(&records).unwrap(), marginal);
        assert_eq!(tail_coverage(&records, 0.25).unwrap(), tail);
        assert_eq!(width_stats(&records).unwrap(), widths);
    }

    #[test]
    fn marginal_is_the_weighted_mean_of_group_coverages() {
        let records: Vec<IntervalRecord> = (0..60)
            .map(|i| record(&format!("g{}", i % 6), i as i64, i % 4 != 0, 1.0))
            .collect();
        let per_group = per_group_coverage(&records).unwrap();
        let weighted: f64 = per_group
            .iter()
            .map(|(g, c)| {
                let n = records.iter().filter(|r| &r.group == g).count() as f64;
                c * n
            })
            .sum::<f64>()
            / records.len() as f64;
        assert!((marginal_coverage(&records).unwrap() - weighted).abs() <= 1e-12);
    }

    #[test]
    fn report_serializes_and_attaches_scaled_widths() {
        let records: Vec<IntervalRecord> =
            (0..20).map(|i| record(&format!("g{}", i % 4), i as i64, i % 7 != 0, 2.0)).collect();
        let mut report = CoverageReport::from_records(&records, 0.25, "all").unwrap();
        report.attach_scaled_widths(4.0).unwrap();
        assert_eq!(report.scaled_width_mean, Some(0.5));
        let json = serde_json::to_string(&report).unwrap();
        let back: CoverageReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
        assert!(report.to_text_table().contains("marginal coverage"));
    }
}
