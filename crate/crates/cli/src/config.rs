//! Experiment configuration: a single JSON document describing the data
//! source, the evaluation protocol, the methods to run, and the seeds to
//! repeat them over. Every field has a default so a minimal config can be
//! `{}`; command-line flags override the top-level fields.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lpci::{BaselineConfig, CsvSchema, LpciConfig, Mode, SyntheticSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Balanced panel CSV with group, time, and target columns.
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
    /// Synthetic AR(1) panel drawn fresh per experiment seed.
    Synthetic(SyntheticSpec),
    /// UK daily covid cases per local authority, fetched once and cached.
    Covid {
        #[serde(default)]
        cache_dir: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

/// How the panel is divided into a training part and an evaluation part.
/// Cross-sectional mode holds out whole groups; longitudinal mode holds out
/// the tail of every group's series.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    TestFraction(f64),
    SplitTime(i64),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::TestFraction(0.25)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lpci,
    Split,
    Cqr,
    SpciPerGroup,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lpci => "lpci",
            Method::Split => "split",
            Method::Cqr => "cqr",
            Method::SpciPerGroup => "spci_per_group",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "lpci" => Ok(Method::Lpci),
            "split" => Ok(Method::Split),
            "cqr" => Ok(Method::Cqr),
            "spci_per_group" => Ok(Method::SpciPerGroup),
            other => bail!("unknown method {other:?}; expected lpci, split, cqr, or spci_per_group"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub mode: Mode,
    pub split: SplitSpec,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Score only the trailing k steps of each group when set.
    pub filter_last: Option<usize>,
    pub tail_fraction: f64,
    pub lpci: LpciConfig,
    /// Shared forest/calibration settings for split and cqr; the runner sets
    /// the method field per cell, so the one in the file is ignored.
    pub baseline: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            mode: Mode::CrossSectional,
            split: SplitSpec::default(),
            methods: vec![Method::Lpci],
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("out"),
            filter_last: None,
            tail_fraction: 0.1,
            lpci: LpciConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("config: cannot read {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("config: cannot parse {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!("config: at least one method is required");
        }
        if self.seeds.is_empty() {
            bail!("config: at least one seed is required");
        }
        if self.methods.contains(&Method::SpciPerGroup) && self.mode != Mode::Longitudinal {
            bail!("config: spci_per_group evaluates each group along time and requires longitudinal mode");
        }
        match (self.mode, self.split) {
            (Mode::CrossSectional, SplitSpec::TestFraction(f)) => {
                if !(0.0 < f && f < 1.0) {
                    bail!("config: test_fraction must be in (0, 1), got {f}");
                }
            }
            (Mode::Longitudinal, SplitSpec::SplitTime(_)) => {}
            (Mode::CrossSectional, SplitSpec::SplitTime(_)) => {
                bail!("config: cross_sectional mode holds out groups and needs a test_fraction split")
            }
            (Mode::Longitudinal, SplitSpec::TestFraction(_)) => {
                bail!("config: longitudinal mode holds out trailing times and needs a split_time")
            }
        }
        if !(0.0 < self.tail_fraction && self.tail_fraction <= 1.0) {
            bail!("config: tail_fraction must be in (0, 1], got {}", self.tail_fraction);
        }
        self.lpci.validate().context("config: lpci block")?;
        self.baseline.validate().context("config: baseline block")?;
        Ok(())
    }
}
