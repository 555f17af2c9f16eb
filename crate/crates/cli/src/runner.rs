//! Experiment execution: per-(method, seed) pipeline runs with cell-unique
//! output files, then a single aggregation pass over the per-seed reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use lpci::seeding::stream_seed;
use lpci::{
    cqr, filter_last_k, spci_per_group, split_conformal, write_records_csv, BaselineConfig,
    BaselineMethod, CoverageReport, IntervalRecord, LpciConfig, LpciModel, Mode, PanelDataset,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, Method, SplitSpec};
use crate::covid;

/// One seed's train/test material, shared read-only by every method cell.
struct SeedSplit {
    seed: u64,
    train: PanelDataset,
    test: PanelDataset,
}

fn build_splits(config: &ExperimentConfig) -> Result<Vec<Arc<SeedSplit>>> {
    // Fixed data sources load once; synthetic panels are drawn fresh per
    // seed so repetitions average over data randomness as well.
    let fixed: Option<PanelDataset> = match &config.data {
        DataSource::Csv { path, schema } => Some(
            PanelDataset::load_csv(path, schema)
                .with_context(|| format!("data: loading {}", path.display()))?,
        ),
        DataSource::Covid { cache_dir } => {
            let dir = covid::resolve_cache_dir(None, cache_dir.as_deref());
            Some(covid::fetch_covid(&dir).context("data: covid panel")?)
        }
        DataSource::Synthetic(_) => None,
    };

    config
        .seeds
        .iter()
        .map(|&seed| {
            let panel = match &config.data {
                DataSource::Synthetic(spec) => {
                    let mut per_seed = spec.clone();
                    per_seed.seed = stream_seed(seed, "data", spec.seed);
                    lpci::generate_synthetic(&per_seed)
                        .with_context(|| format!("data: synthetic panel for seed {seed}"))?
                }
                _ => fixed.clone().expect("fixed source loaded above"),
            };
            let (train, test) = match config.split {
                SplitSpec::TestFraction(fraction) => panel
                    .split_cross_sectional(fraction, stream_seed(seed, "split", 0))
                    .with_context(|| format!("data: group split for seed {seed}"))?,
                SplitSpec::SplitTime(at) => panel
                    .split_longitudinal(at)
                    .with_context(|| format!("data: time split for seed {seed}"))?,
            };
            Ok(Arc::new(SeedSplit { seed, train, test }))
        })
        .collect()
}

fn run_cell(config: &ExperimentConfig, method: Method, split: &SeedSplit) -> Result<Vec<IntervalRecord>> {
    let seed = split.seed;
    match method {
        Method::Lpci => {
            let lpci_config = LpciConfig {
                seed: stream_seed(seed, "lpci", 0),
                ..config.lpci.clone()
            };
            let mut model = LpciModel::fit(&split.train, &lpci_config)?;
            match config.mode {
                Mode::CrossSectional => Ok(model.run_cross_sectional(&split.test)?),
                Mode::Longitudinal => Ok(model.run_longitudinal(&split.test)?),
            }
        }
        Method::Split => {
            let baseline = BaselineConfig {
                method: BaselineMethod::Split,
                seed: stream_seed(seed, "split_conformal", 0),
                ..config.baseline.clone()
            };
            Ok(split_conformal(&split.train, &split.test, config.mode, &baseline)?)
        }
        Method::Cqr => {
            let baseline = BaselineConfig {
                method: BaselineMethod::Cqr,
                seed: stream_seed(seed, "cqr", 0),
                ..config.baseline.clone()
            };
            Ok(cqr(&split.train, &split.test, config.mode, &baseline)?)
        }
        Method::SpciPerGroup => {
            let lpci_config = LpciConfig {
                seed: stream_seed(seed, "spci_per_group", 0),
                ..config.lpci.clone()
            };
            Ok(spci_per_group(&split.train, &split.test, &lpci_config)?)
        }
    }
}

fn build_report(
    config: &ExperimentConfig,
    records: &[IntervalRecord],
    train: &PanelDataset,
) -> Result<CoverageReport> {
    let (scored, filter_desc) = match config.filter_last {
        Some(k) => (filter_last_k(records, k), format!("last_{k}")),
        None => (records.to_vec(), "all".to_string()),
    };
    let mut report = CoverageReport::from_records(&scored, config.tail_fraction, &filter_desc)?;
    // Scaled widths are reported in units of the training target spread so
    // runs on differently scaled data stay comparable.
    let scaler = train.fit_target_scaler()?;
    report.attach_scaled_widths(scaler.std)?;
    Ok(report)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("run: cannot create {}", config.out_dir.display()))?;

    let splits = build_splits(config)?;
    let cells: Vec<(Method, Arc<SeedSplit>)> = config
        .methods
        .iter()
        .flat_map(|&m| splits.iter().map(move |s| (m, Arc::clone(s))))
        .collect();

    let results: Vec<(String, u64, CoverageReport)> = cells
        .par_iter()
        .map(|(method, split)| {
            let records = run_cell(config, *method, split).with_context(|| {
                format!("run: method {} seed {}", method.name(), split.seed)
            })?;
            let report = build_report(config, &records, &split.train).with_context(|| {
                format!("report: method {} seed {}", method.name(), split.seed)
            })?;

            let records_path = config
                .out_dir
                .join(format!("records_{}_{}.csv", method.name(), split.seed));
            write_records_csv(&records_path, &records)
                .with_context(|| format!("run: writing {}", records_path.display()))?;
            let report_path = config
                .out_dir
                .join(format!("report_{}_{}.json", method.name(), split.seed));
            write_json(&report_path, &report)?;

            Ok((method.name().to_string(), split.seed, report))
        })
        .collect::<Result<_>>()?;

    let aggregate = aggregate_reports(&results)?;
    write_aggregate(&config.out_dir, &aggregate)?;
    print!("{}", aggregate.to_text_table());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path)
        .with_context(|| format!("report: cannot create {}", path.display()))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)
        .with_context(|| format!("report: cannot serialize {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub mean: f64,
    pub std: f64,
    /// Paper-table style rendering, e.g. "0.903 ± 0.006".
    pub display: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    /// method -> metric -> mean/std across seeds.
    pub methods: BTreeMap<String, BTreeMap<String, AggregateEntry>>,
}

impl AggregateReport {
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        for (method, metrics) in &self.methods {
            out.push_str(&format!("{method} ({} seeds)\n", self.seeds.len()));
            for (metric, entry) in metrics {
                out.push_str(&format!("  {metric:<20} {}\n", entry.display));
            }
        }
        out
    }
}

fn metric_values(report: &CoverageReport) -> Vec<(&'static str, f64)> {
    let mut values = vec![
        ("marginal_coverage", report.marginal_coverage),
        ("tail_coverage", report.tail_coverage),
        ("width_mean", report.width_mean),
        ("width_std", report.width_std),
        ("width_cov", report.width_cov),
    ];
    if let Some(v) = report.scaled_width_mean {
        values.push(("scaled_width_mean", v));
    }
    if let Some(v) = report.scaled_width_std {
        values.push(("scaled_width_std", v));
    }
    values
}

pub fn aggregate_reports(results: &[(String, u64, CoverageReport)]) -> Result<AggregateReport> {
    if results.is_empty() {
        bail!("report: nothing to aggregate");
    }
    let mut seeds: Vec<u64> = results.iter().map(|(_, s, _)| *s).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let mut methods: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for (method, _, report) in results {
        let metrics = methods.entry(method.clone()).or_default();
        for (name, value) in metric_values(report) {
            metrics.entry(name.to_string()).or_default().push(value);
        }
    }

    let mut aggregated = BTreeMap::new();
    for (method, metrics) in methods {
        let mut rows = BTreeMap::new();
        for (metric, values) in metrics {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var =
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
            let std = var.sqrt();
            rows.insert(
                metric,
                AggregateEntry { mean, std, display: format!("{mean:.3} \u{00b1} {std:.3}") },
            );
        }
        aggregated.insert(method, rows);
    }
    Ok(AggregateReport { seeds, methods: aggregated })
}

fn write_aggregate(out_dir: &Path, aggregate: &AggregateReport) -> Result<()> {
    write_json(&out_dir.join("aggregate.json"), aggregate)?;

    let csv_path = out_dir.join("aggregate.csv");
    let mut writer = csv::Writer::from_path(&csv_path)
        .with_context(|| format!("report: cannot create {}", csv_path.display()))?;
    writer
        .write_record(["method", "metric", "mean", "std", "display"])
        .context("report: aggregate header")?;
    for (method, metrics) in &aggregate.methods {
        for (metric, entry) in metrics {
            writer
                .write_record([
                    method.as_str(),
                    metric.as_str(),
                    &entry.mean.to_string(),
                    &entry.std.to_string(),
                    &entry.display,
                ])
                .context("report: aggregate row")?;
        }
    }
    writer.flush().context("report: aggregate flush")?;
    Ok(())
}

/// Rebuilds the aggregate files from the per-seed report JSONs already in
/// `dir`, keyed by the `report_{method}_{seed}.json` naming convention.
pub fn reaggregate_dir(dir: &Path) -> Result<AggregateReport> {
    let mut results = Vec::new();
    let entries = fs::read_dir(dir)
        .with_context(|| format!("report: cannot read {}", dir.display()))?;
    for entry in entries {
        let path = entry.context("report: directory walk")?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        let stem = match name.strip_prefix("report_").and_then(|n| n.strip_suffix(".json")) {
            Some(s) => s,
            None => continue,
        };
        let (method, seed) = stem
            .rsplit_once('_')
            .with_context(|| format!("report: unrecognized report name {name}"))?;
        let seed: u64 = seed
            .parse()
            .with_context(|| format!("report: bad seed in report name {name}"))?;
        let text = fs::read_to_string(&path)
            .with_context(|| format!("report: cannot read {}", path.display()))?;
        let report: CoverageReport = serde_json::from_str(&text)
            .with_context(|| format!("report: cannot parse {}", path.display()))?;
        results.push((method.to_string(), seed, report));
    }
    let aggregate = aggregate_reports(&results)?;
    write_aggregate(dir, &aggregate)?;
    Ok(aggregate)
}
