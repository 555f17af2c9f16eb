//! UK daily covid case counts per lower-tier local authority, normalized to
//! a balanced panel over a fixed date window.
//!
//! The raw CSV is cached on first download; later runs (including offline
//! ones) read the cache. The cache directory is resolved in precedence
//! order: `--cache` flag, config field, the `LPCI_CACHE_DIR` environment
//! variable, then `./covid_cache`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use lpci::{Observation, PanelDataset};

pub const ENDPOINT: &str = "https://api.coronavirus.data.gov.uk/v2/data?areaType=ltla&metric=newCasesBySpecimenDate&format=csv";
pub const CACHE_FILE: &str = "uk_covid_daily_cases.csv";
pub const CACHE_ENV: &str = "LPCI_CACHE_DIR";

pub fn resolve_cache_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("covid_cache"))
}

/// The evaluation window: 2022-02-01 through 2022-03-31, 59 calendar days,
/// renumbered 1..=59.
fn window_dates() -> Vec<String> {
    let mut dates = Vec::with_capacity(59);
    for day in 1..=28 {
        dates.push(format!("2022-02-{day:02}"));
    }
    for day in 1..=31 {
        dates.push(format!("2022-03-{day:02}"));
    }
    dates
}

pub fn fetch_covid(cache_dir: &Path) -> Result<PanelDataset> {
    let cache_path = cache_dir.join(CACHE_FILE);
    if !cache_path.exists() {
        download(&cache_path)?;
    }
    let text = fs::read_to_string(&cache_path)
        .with_context(|| format!("covid fetch: cannot read cache {}", cache_path.display()))?;
    panel_from_dashboard_csv(&text)
}

fn download(cache_path: &Path) -> Result<()> {
    if let Some(parent) = cache_path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("covid fetch: cannot create {}", parent.display()))?;
    }
    let client = reqwest::blocking::Client::builder()
        .connect_timeout(Duration::from_secs(10))
        .timeout(Duration::from_secs(300))
        .build()
        .context("covid fetch: cannot build http client")?;
    let response = client.get(ENDPOINT).send().with_context(|| {
        format!(
            "covid fetch: request to {ENDPOINT} failed and the cache at {} is empty; \
             populate the cache or retry with network access",
            cache_path.display()
        )
    })?;
    let response = response
        .error_for_status()
        .context("covid fetch: server rejected the request")?;
    let body = response.bytes().context("covid fetch: download interrupted")?;
    // Write through a sibling temp file so an interrupted download never
    // leaves a half-written cache behind.
    let tmp = cache_path.with_extension("part");
    fs::write(&tmp, &body)
        .with_context(|| format!("covid fetch: cannot write {}", tmp.display()))?;
    fs::rename(&tmp, cache_path)
        .with_context(|| format!("covid fetch: cannot move cache into {}", cache_path.display()))?;
    eprintln!("covid fetch: downloaded {} bytes to {}", body.len(), cache_path.display());
    Ok(())
}

/// Parses the dashboard CSV into a balanced panel keyed by area code.
/// Authorities missing any day of the window are dropped with a logged
/// count; the remaining series are renumbered to times 1..=59.
pub fn panel_from_dashboard_csv(text: &str) -> Result<PanelDataset> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .context("covid fetch: cache has no header row")?
        .iter()
        .map(str::to_owned)
        .collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("covid fetch: cache is missing the {name} column"))
    };
    let date_col = col("date")?;
    let area_col = col("areaCode")?;
    let cases_col = col("newCasesBySpecimenDate")?;

    let window = window_dates();
    let first = window.first().expect("window is nonempty").clone();
    let last = window.last().expect("window is nonempty").clone();

    let mut by_area: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.context("covid fetch: malformed cache row")?;
        let date = &record[date_col];
        if date < first.as_str() || date > last.as_str() {
            continue;
        }
        let raw = record[cases_col].trim();
        if raw.is_empty() {
            continue;
        }
        let cases: f64 = raw
            .parse()
            .with_context(|| format!("covid fetch: bad case count {raw:?} on {date}"))?;
        let area = record[area_col].to_owned();
        if let Some(previous) = by_area
            .entry(area.clone())
            .or_default()
            .insert(date.to_owned(), cases)
        {
            if previous != cases {
                bail!("covid fetch: conflicting counts for {area} on {date}: {previous} vs {cases}");
            }
        }
    }
    if by_area.is_empty() {
        bail!("covid fetch: no rows inside the {first}..{last} window");
    }

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for (area, series) in &by_area {
        if window.iter().any(|d| !series.contains_key(d)) {
            dropped += 1;
            continue;
        }
        for (index, date) in window.iter().enumerate() {
            rows.push(Observation {
                group: area.clone(),
                time: index as i64 + 1,
                target: series[date],
                exog: Vec::new(),
            });
        }
    }
    if dropped > 0 {
        eprintln!(
            "covid fetch: dropped {dropped} of {} authorities with incomplete {first}..{last} windows",
            by_area.len()
        );
    }
    if rows.is_empty() {
        bail!("covid fetch: every authority had an incomplete {first}..{last} window");
    }

    PanelDataset::from_observations(&rows, Vec::new()).context("covid fetch: panel assembly")
}
