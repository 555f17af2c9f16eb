//! Shared fixtures: an independent brute-force oracle for forest weight,
//! CDF, and quantile queries, plus panel and forest generators.
//!
//! The oracle never calls the library's weight or distribution code. It
//! walks the stored trees itself, accumulates dense weights tree by tree,
//! orders (target, sample index) pairs explicitly, and reads CDF values
//! and quantiles off running sums in that order. The library documents the
//! same accumulation order as its contract, so oracle and library must
//! agree bitwise, not just within tolerance.

#![allow(dead_code)]

use lpci::forest::{ForestParams, QuantileForest, TreeNode};
use lpci::matrix::Matrix;
use lpci::panel::{Observation, PanelDataset};
use lpci::seeding::stream_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Walks one tree by hand; mirrors the split rule x[feature] <= threshold.
fn oracle_leaf<'a>(nodes: &'a [TreeNode], x: &[f64]) -> &'a TreeNode {
    let mut slot = 0;
    loop {
        match &nodes[slot] {
            TreeNode::Internal { feature, threshold, left, right } => {
                slot = if x[*feature] <= *threshold { *left } else { *right };
            }
            leaf @ TreeNode::Leaf { .. } => return leaf,
        }
    }
}

/// Dense per-sample weights accumulated tree by tree, each leaf member
/// receiving 1/(n_trees * leaf size).
pub fn oracle_dense_weights(forest: &QuantileForest, x: &[f64]) -> Vec<f64> {
    let k_total = forest.trees().len();
    let mut dense = vec![0.0f64; forest.targets().len()];
    for tree in forest.trees() {
        if let TreeNode::Leaf { samples, .. } = oracle_leaf(tree.nodes(), x) {
            let w = 1.0 / ((k_total * samples.len()) as f64);
            for &i in samples {
                dense[i] += w;
            }
        }
    }
    dense
}

/// Weighted pairs in the canonical order: target ascending, sample index
/// ascending among equal targets; zero-weight samples are kept so the
/// summation sequence matches the library exactly.
pub struct OracleDistribution {
    /// (target, weight) in canonical order.
    pairs: Vec<(f64, f64)>,
}

pub fn oracle_distribution(forest: &QuantileForest, x: &[f64]) -> OracleDistribution {
    let dense = oracle_dense_weights(forest, x);
    let mut order: Vec<usize> = (0..dense.len()).filter(|i| dense[*i] > 0.0).collect();
    order.sort_by(|a, b| forest.targets()[*a].total_cmp(&forest.targets()[*b]).then(a.cmp(b)));
    let pairs = order.into_iter().map(|i| (forest.targets()[i], dense[i])).collect();
    OracleDistribution { pairs }
}

impl OracleDistribution {
    pub fn total_weight(&self) -> f64 {
        self.pairs.iter().map(|(_, w)| w).sum()
    }

    /// Running sum over targets at or below z.
    pub fn cdf(&self, z: f64) -> f64 {
        let mut acc = 0.0;
        for (t, w) in &self.pairs {
            if *t > z {
                break;
            }
            acc += w;
        }
        acc
    }

    /// First target whose running sum reaches p; the largest target when
    /// none does.
    pub fn quantile(&self, p: f64) -> f64 {
        let mut acc = 0.0;
        for (t, w) in &self.pairs {
            acc += w;
            if acc >= p {
                return *t;
            }
        }
        self.pairs.last().expect("nonempty distribution").0
    }

    pub fn min_target(&self) -> f64 {
        self.pairs.first().expect("nonempty distribution").0
    }

    pub fn max_target(&self) -> f64 {
        self.pairs.last().expect("nonempty distribution").0
    }
}

/// A forest over random data with randomized shape parameters; small
/// enough for brute-force comparison.
pub fn random_small_forest(rng: &mut ChaCha8Rng) -> (QuantileForest, usize) {
    let n = rng.random_range(5..=50);
    let d = rng.random_range(1..=3);
    let rows: Vec<Vec<f64>> =
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    // Duplicated targets exercise the equal-target tie order.
    let targets: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < 0.3 {
                f64::from(rng.random_range(-2i32..=2))
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
        .collect();
    let params = ForestParams {
        n_trees: rng.random_range(1..=8),
        min_leaf_size: rng.random_range(1..=3),
        max_features: None,
        bootstrap: rng.random::<f64>() < 0.7,
        seed: rng.random(),
    };
    let m = Matrix::from_rows(&rows).unwrap();
    (QuantileForest::fit(&m, &targets, &params).unwrap(), d)
}

pub fn random_query(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-2.5..2.5)).collect()
}

/// Deterministic panel built from a closure over (group index, time).
pub fn panel_from_fn(
    groups: usize,
    times: usize,
    f: impl Fn(usize, i64) -> f64,
) -> PanelDataset {
    let mut obs = Vec::new();
    for g in 0..groups {
        for t in 1..=times as i64 {
            obs.push(Observation {
                group: format!("g{g:03}"),
                time: t,
                target: f(g, t),
                exog: Vec::new(),
            });
        }
    }
    PanelDataset::from_observations(&obs, Vec::new()).unwrap()
}

/// Seeded rng shorthand for test file streams.
pub fn rng(seed: u64, label: &str) -> ChaCha8Rng {
    stream_rng(seed, label, 0)
}
