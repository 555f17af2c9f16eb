//! CART regression trees, bagged forests, and quantile queries via leaf weights.
//!
//! A fitted forest answers three queries for a feature vector x: the mean
//! prediction, a weight over training samples (per tree, each sample in the
//! leaf x falls into gets one over that leaf's size; weights are averaged
//! across trees and sum to 1), and the weighted empirical CDF and quantiles
//! of the training targets under those weights.
//!
//! Tree structure is fit on a bootstrap resample, but every leaf stores the
//! full training-set membership routed through the fitted tree, so leaf
//! sizes, leaf means, and weights always refer to all training samples.
//!
//! Canonical accumulation order: CDF and quantile queries sort the weighted
//! (target, sample index) pairs by target then index and take prefix sums in
//! that order. cdf(z) is the prefix sum at the last entry with target <= z;
//! quantile(p) is the first target whose prefix sum reaches p.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LpciError, Result};
use crate::matrix::Matrix;
use crate::seeding::stream_seed;

/// Forest hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf_size: usize,
    /// Features tried per split; None picks all features when there are at
    /// most 3, otherwise a third of them rounded up.
    pub max_features: Option<usize>,
    /// Resample rows with replacement (same size) per tree.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, min_leaf_size: 5, max_features: None, bootstrap: true, seed: 0 }
    }
}

impl ForestParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(LpciError::Config("n_trees must be at least 1".into()));
        }
        if self.min_leaf_size == 0 {
            return Err(LpciError::Config("min_leaf_size must be at least 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(LpciError::Config("max_features must be at least 1".into()));
        }
        Ok(())
    }

    fn resolved_max_features(&self, d: usize) -> usize {
        let m = self.max_features.unwrap_or(if d <= 3 { d } else { d.div_ceil(3) });
        m.clamp(1, d)
    }
}

/// One tree node: a threshold split or a leaf holding training-sample indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { samples: Vec<usize>, mean: f64 },
}

/// Regression tree as a node arena; nodes[0] is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Index of the unique leaf containing x.
    pub fn leaf_slot(&self, x: &[f64]) -> usize {
        let mut slot = 0;
        loop {
            match &self.nodes[slot] {
                TreeNode::Internal { feature, threshold, left, right } => {
                    slot = if x[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { .. } => return slot,
            }
        }
    }

    /// Cached mean of the full-set targets in x's leaf.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.leaf_slot(x)] {
            TreeNode::Leaf { mean, .. } => *mean,
            TreeNode::Internal { .. } => unreachable!("leaf_slot returns a leaf"),
        }
    }
}

/// Greedy variance-reduction split: lowest SSE over candidate features and
/// midpoint thresholds between consecutive distinct sorted values. Ties keep
/// the lowest feature index, then the smallest threshold. Returns the split
/// and the partitioned index sets, or None when no split strictly reduces SSE
/// under the min_leaf_size constraint.
fn find_split(
    samples: &Matrix,
    targets: &[f64],
    idx: &[usize],
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64, Vec<usize>, Vec<usize>)> {
    let n = idx.len();
    let min_leaf = params.min_leaf_size;
    if n < 2 * min_leaf {
        return None;
    }
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for &i in idx {
        let t = targets[i];
        sum += t;
        sumsq += t * t;
        t_min = t_min.min(t);
        t_max = t_max.max(t);
    }
    if t_min == t_max {
        return None;
    }
    let parent_sse = sumsq - sum * sum / n as f64;

    let d = samples.n_cols();
    let m = params.resolved_max_features(d);
    let features: Vec<usize> = if m == d {
        (0..d).collect()
    } else {
        let mut chosen = rand::seq::index::sample(rng, d, m).into_vec();
        chosen.sort_unstable();
        chosen
    };

    let mut best: Option<(usize, f64, f64)> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for f in features {
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (samples.row(i)[f], targets[i])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut lsum = 0.0;
        let mut lsq = 0.0;
        for (pos, (v, t)) in pairs[..n - 1].iter().enumerate() {
            lsum += t;
            lsq += t * t;
            let n_l = pos + 1;
            let n_r = n - n_l;
            let next_v = pairs[pos + 1].0;
            if *v == next_v || n_l < min_leaf || n_r < min_leaf {
                continue;
            }
            let threshold = (*v + next_v) / 2.0;
            // Midpoints of adjacent floats can collapse onto a boundary.
            if !(*v <= threshold && threshold < next_v) {
                continue;
            }
            let rsum = sum - lsum;
            let rsq = sumsq - lsq;
            let sse = (lsq - lsum * lsum / n_l as f64) + (rsq - rsum * rsum / n_r as f64);
            let gain = parent_sse - sse;
            if gain > 0.0 && best.map_or(true, |(_, _, g)| gain > g) {
                best = Some((f, threshold, gain));
            }
        }
    }

    let (feature, threshold, _) = best?;
    let (left, right): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&i| samples.row(i)[feature] <= threshold);
    Some((feature, threshold, left, right))
}

/// Builds one tree: structure from `in_bag` rows, then leaf membership and
/// means from all rows routed through the fitted structure.
fn build_tree(
    samples: &Matrix,
    targets: &[f64],
    in_bag: Vec<usize>,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut nodes = vec![TreeNode::Leaf { samples: Vec::new(), mean: 0.0 }];
    let mut work = vec![(0usize, in_bag)];
    while let Some((slot, idx)) = work.pop() {
        match find_split(samples, targets, &idx, params, rng) {
            Some((feature, threshold, left_idx, right_idx)) => {
                let left = nodes.len();
                let right = left + 1;
                nodes.push(TreeNode::Leaf { samples: Vec::new(), mean: 0.0 });
                nodes.push(TreeNode::Leaf { samples: Vec::new(), mean: 0.0 });
                nodes[slot] = TreeNode::Internal { feature, threshold, left, right };
                work.push((left, left_idx));
                work.push((right, right_idx));
            }
            None => nodes[slot] = TreeNode::Leaf { samples: idx, mean: 0.0 },
        }
    }
    let mut tree = Tree { nodes };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
    for i in 0..samples.n_rows() {
        members[tree.leaf_slot(samples.row(i))].push(i);
    }
    for (slot, node) in tree.nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { samples: leaf_samples, mean } = node {
            let full = std::mem::take(&mut members[slot]);
            // Every in-bag row routes back to its own leaf, so no leaf is empty.
            *mean = full.iter().map(|&i| targets[i]).sum::<f64>() / full.len() as f64;
            *leaf_samples = full;
        }
    }
    tree
}

fn validate_training_input(samples: &Matrix, targets: &[f64], params: &ForestParams) -> Result<()> {
    params.validate()?;
    if samples.n_rows() == 0 {
        return Err(LpciError::Argument("cannot fit on an empty sample matrix".into()));
    }
    if samples.n_rows() != targets.len() {
        return Err(LpciError::Argument(format!(
            "{} sample rows but {} targets",
            samples.n_rows(),
            targets.len()
        )));
    }
    if samples.n_rows() < params.min_leaf_size {
        return Err(LpciError::Argument(format!(
            "{} rows cannot satisfy min_leaf_size {}",
            samples.n_rows(),
            params.min_leaf_size
        )));
    }
    Ok(())
}

/// Fits a single tree on all rows (no bootstrap); rng drives per-split
/// feature subsampling.
pub fn fit_tree(
    samples: &Matrix,
    targets: &[f64],
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Result<Tree> {
    validate_training_input(samples, targets, params)?;
    Ok(build_tree(samples, targets, (0..samples.n_rows()).collect(), params, rng))
}

/// Per-sample weights for one query point; entries are (training-sample
/// index, weight) with ascending indices and strictly positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    entries: Vec<(usize, f64)>,
}

impl WeightVector {
    /// Builds from sparse entries; indices must ascend strictly and weights
    /// must be positive.
    pub fn from_entries(entries: Vec<(usize, f64)>) -> Result<Self> {
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(LpciError::Argument("weight indices must ascend strictly".into()));
            }
        }
        if entries.iter().any(|(_, w)| *w <= 0.0 || !w.is_finite()) {
            return Err(LpciError::Argument("weights must be positive and finite".into()));
        }
        Ok(Self { entries })
    }

    fn from_dense(dense: &[f64]) -> Self {
        let entries =
            dense.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, w)| (i, *w)).collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |(i, _)| *i)
            .map_or(0.0, |pos| self.entries[pos].1)
    }

    /// Sum in ascending index order.
    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }
}

/// Weighted empirical distribution over training targets, in canonical
/// (target, sample index) order with precomputed prefix sums.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDistribution {
    targets: Vec<f64>,
    cum: Vec<f64>,
}

impl WeightedDistribution {
    pub fn new(weights: &WeightVector, targets: &[f64]) -> Self {
        let mut pairs: Vec<(f64, f64)> =
            weights.entries().iter().map(|(i, w)| (targets[*i], *w)).collect();
        // Stable sort keeps ascending sample index among equal targets.
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = Vec::with_capacity(pairs.len());
        let mut acc = 0.0;
        let mut sorted_targets = Vec::with_capacity(pairs.len());
        for (t, w) in pairs {
            acc += w;
            sorted_targets.push(t);
            cum.push(acc);
        }
        Self { targets: sorted_targets, cum }
    }

    /// Total weight at or below z; a right-continuous step function.
    pub fn cdf(&self, z: f64) -> f64 {
        let pos = self.targets.partition_point(|t| *t <= z);
        if pos == 0 {
            0.0
        } else {
            self.cum[pos - 1]
        }
    }

    /// Smallest target whose cumulative weight reaches p; p is clamped to
    /// the achievable range, so p <= 0 gives the smallest target and p
    /// beyond the total weight gives the largest.
    pub fn quantile(&self, p: f64) -> f64 {
        let pos = self.cum.partition_point(|c| *c < p);
        if pos == self.targets.len() {
            *self.targets.last().expect("distribution is nonempty")
        } else {
            self.targets[pos]
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Bagged regression forest with quantile queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileForest {
    trees: Vec<Tree>,
    targets: Vec<f64>,
    n_features: usize,
    params: ForestParams,
}

impl QuantileForest {
    /// Fits n_trees trees, each on its own bootstrap resample (or on all
    /// rows when bootstrap is off), with independent per-tree RNG streams.
    /// Deterministic given (data, params, seed).
    pub fn fit(samples: &Matrix, targets: &[f64], params: &ForestParams) -> Result<Self> {
        validate_training_input(samples, targets, params)?;
        let n = samples.n_rows();
        let seeds: Vec<u64> =
            (0..params.n_trees).map(|k| stream_seed(params.seed, "tree", k as u64)).collect();
        let fit_one = |seed: &u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let in_bag: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            build_tree(samples, targets, in_bag, params, &mut rng)
        };
        #[cfg(feature = "parallel")]
        let trees: Vec<Tree> = seeds.par_iter().map(fit_one).collect();
        #[cfg(not(feature = "parallel"))]
        let trees: Vec<Tree> = seeds.iter().map(fit_one).collect();
        Ok(Self { trees, targets: targets.to_vec(), n_features: samples.n_cols(), params: params.clone() })
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(LpciError::Argument(format!(
                "query has {} features, forest was trained with {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Mean over trees of the leaf-mean target.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_dims(x)?;
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Per-sample weights: each tree spreads 1/(n_trees * leaf size) over
    /// the full-set members of x's leaf; contributions accumulate in tree
    /// order. The weights sum to 1 up to rounding.
    pub fn leaf_weights(&self, x: &[f64]) -> Result<WeightVector> {
        self.check_dims(x)?;
        let k_total = self.trees.len();
        let mut dense = vec![0.0f64; self.targets.len()];
        for tree in &self.trees {
            if let TreeNode::Leaf { samples, .. } = &tree.nodes[tree.leaf_slot(x)] {
                let w = 1.0 / ((k_total * samples.len()) as f64);
                for &i in samples {
                    dense[i] += w;
                }
            }
        }
        Ok(WeightVector::from_dense(&dense))
    }

    /// Weighted empirical distribution of training targets at x; one call
    /// serves any number of cdf/quantile evaluations.
    pub fn distribution(&self, x: &[f64]) -> Result<WeightedDistribution> {
        Ok(WeightedDistribution::new(&self.leaf_weights(x)?, &self.targets))
    }

    /// Weighted fraction of training targets at or below z.
    pub fn conditional_cdf(&self, x: &[f64], z: f64) -> Result<f64> {
        Ok(self.distribution(x)?.cdf(z))
    }

    /// Smallest training target whose conditional CDF reaches p.
    pub fn quantile(&self, x: &[f64], p: f64) -> Result<f64> {
        if !(0.0 < p && p < 1.0) {
            return Err(LpciError::Argument(format!("quantile level must be in (0,1), got {p}")));
        }
        Ok(self.distribution(x)?.quantile(p))
    }

    /// Same tree structure with replaced training targets; leaf means are
    /// recomputed from the stored memberships.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Self> {
        if targets.len() != self.targets.len() {
            return Err(LpciError::Argument(format!(
                "{} replacement targets for {} training samples",
                targets.len(),
                self.targets.len()
            )));
        }
        let mut trees = self.trees.clone();
        for tree in &mut trees {
            for node in &mut tree.nodes {
                if let TreeNode::Leaf { samples, mean } = node {
                    *mean = samples.iter().map(|&i| targets[i]).sum::<f64>() / samples.len() as f64;
                }
            }
        }
        Ok(Self { trees, targets, n_features: self.n_features, params: self.params.clone() })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;

    fn single_column(values: &[f64]) -> Matrix {
        Matrix::from_rows(&values.iter().map(|v| vec![*v]).collect::<Vec<_>>()).unwrap()
    }

    fn manual_forest(trees: Vec<Tree>, targets: Vec<f64>, n_features: usize) -> QuantileForest {
        QuantileForest { trees, targets, n_features, params: ForestParams::default() }
    }

    fn single_leaf_tree(samples: Vec<usize>, targets: &[f64]) -> Tree {
        let mean = samples.iter().map(|&i| targets[i]).sum::<f64>() / samples.len() as f64;
        Tree { nodes: vec![TreeNode::Leaf { samples, mean }] }
    }

    #[test]
    fn constant_targets_yield_a_single_leaf() {
        let m = single_column(&[1.0, 2.0, 3.0, 4.0]);
        let params = ForestParams { min_leaf_size: 1, ..ForestParams::default() };
        let tree = fit_tree(&m, &[5.0; 4], &params, &mut stream_rng(0, "t", 0)).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert_eq!(tree.predict(&[2.5]), 5.0);
    }

    #[test]
    fn min_leaf_one_fits_distinct_points_exactly() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        let m = single_column(&values);
        let params = ForestParams { min_leaf_size: 1, ..ForestParams::default() };
        let tree = fit_tree(&m, &values, &params, &mut stream_rng(0, "t", 0)).unwrap();
        for v in &values {
            assert_eq!(tree.predict(&[*v]), *v, "training point {v} not reproduced");
        }
    }

    #[test]
    fn separable_clusters_split_between_them() {
        let m = single_column(&[-2.0, -1.0, 1.0, 2.0]);
        let targets = [0.0, 0.0, 1.0, 1.0];
        let params = ForestParams { min_leaf_size: 1, ..ForestParams::default() };
        let tree = fit_tree(&m, &targets, &params, &mut stream_rng(0, "t", 0)).unwrap();
        match &tree.nodes()[0] {
            TreeNode::Internal { threshold, .. } => {
                assert!(*threshold > -1.0 && *threshold < 1.0, "threshold {threshold}");
            }
            TreeNode::Leaf { .. } => panic!("expected a root split"),
        }
    }

    #[test]
    fn all_leaves_respect_min_leaf_size_without_bootstrap() {
        let mut rng = stream_rng(5, "leafsize", 0);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let targets: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let params =
            ForestParams { n_trees: 5, min_leaf_size: 7, bootstrap: false, ..ForestParams::default() };
        let f = QuantileForest::fit(&m, &targets, &params).unwrap();
        for tree in f.trees() {
            for node in tree.nodes() {
                if let TreeNode::Leaf { samples, .. } = node {
                    assert!(samples.len() >= 7, "leaf of size {}", samples.len());
                }
            }
        }
    }

    #[test]
    fn one_tree_without_bootstrap_equals_the_tree() {
        let values: Vec<f64> = (0..30).map(|i| f64::from(i) / 3.0).collect();
        let targets: Vec<f64> = values.iter().map(|v| v * 2.0).collect();
        let m = single_column(&values);
        let params = ForestParams { n_trees: 1, bootstrap: false, ..ForestParams::default() };
        let forest = QuantileForest::fit(&m, &targets, &params).unwrap();
        let tree = fit_tree(&m, &targets, &params, &mut stream_rng(params.seed, "tree", 0)).unwrap();
        for q in [0.1, 3.3, 9.9] {
            assert_eq!(forest.predict_mean(&[q]).unwrap(), tree.predict(&[q]));
        }
    }

    #[test]
    fn same_seed_reproduces_the_forest_bit_for_bit() {
        let mut rng = stream_rng(9, "determinism", 0);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.random(), rng.random()]).collect();
        let targets: Vec<f64> = (0..60).map(|_| rng.random()).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let params = ForestParams { n_trees: 12, seed: 4, ..ForestParams::default() };
        let a = QuantileForest::fit(&m, &targets, &params).unwrap();
        let b = QuantileForest::fit(&m, &targets, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forest_generalizes_on_a_noisy_line() {
        use rand_distr::StandardNormal;
        let mut rng = stream_rng(21, "mse_oracle", 0);
        let xs: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..4.0)).collect();
        let ys: Vec<f64> =
            xs.iter().map(|x| x + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let m = single_column(&xs);
        let f = QuantileForest::fit(&m, &ys, &ForestParams::default()).unwrap();
        let mse: f64 = (0..200)
            .map(|i| 0.2 + 3.6 * f64::from(i) / 199.0)
            .map(|x| (f.predict_mean(&[x]).unwrap() - x).powi(2))
            .sum::<f64>()
            / 200.0;
        assert!(mse < 0.05, "out-of-sample mse {mse}");
    }

    #[test]
    fn single_leaf_mean_is_target_mean() {
        let targets = vec![1.0, 2.0, 3.0];
        let f = manual_forest(vec![single_leaf_tree(vec![0, 1, 2], &targets)], targets, 1);
        assert_eq!(f.predict_mean(&[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn prediction_stays_within_target_range() {
        let mut rng = stream_rng(2, "range", 0);
        let rows: Vec<Vec<f64>> = (0..80).map(|_| vec![rng.random(), rng.random()]).collect();
        let targets: Vec<f64> = (0..80).map(|_| rng.random_range(-3.0..5.0)).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let f = QuantileForest::fit(&m, &targets, &ForestParams { n_trees: 10, ..ForestParams::default() })
            .unwrap();
        let (lo, hi) = (
            targets.iter().cloned().fold(f64::INFINITY, f64::min),
            targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        for _ in 0..20 {
            let p = f.predict_mean(&[rng.random(), rng.random()]).unwrap();
            assert!(p >= lo && p <= hi, "prediction {p} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn one_leaf_splits_weight_evenly() {
        let targets = vec![0.0; 10];
        let f = manual_forest(vec![single_leaf_tree(vec![3, 7], &targets)], targets, 1);
        let w = f.leaf_weights(&[0.0]).unwrap();
        assert_eq!(w.entries(), &[(3, 0.5), (7, 0.5)]);
    }

    #[test]
    fn weights_average_across_trees() {
        // tree 1 leaf {0}, tree 2 leaf {0,1}: weights {0: 0.75, 1: 0.25}.
        let targets = vec![0.0, 0.0];
        let f = manual_forest(
            vec![single_leaf_tree(vec![0], &targets), single_leaf_tree(vec![0, 1], &targets)],
            targets,
            1,
        );
        let w = f.leaf_weights(&[0.0]).unwrap();
        assert_eq!(w.entries(), &[(0, 0.75), (1, 0.25)]);
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = stream_rng(14, "wsum", 0);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random(), rng.random()]).collect();
        let targets: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let f = QuantileForest::fit(&m, &targets, &ForestParams { n_trees: 7, min_leaf_size: 2, ..ForestParams::default() })
            .unwrap();
        for _ in 0..10 {
            let w = f.leaf_weights(&[rng.random(), rng.random()]).unwrap();
            assert!((w.sum() - 1.0).abs() <= 1e-9, "weight sum {}", w.sum());
        }
    }

    #[test]
    fn cdf_of_uniform_weights_counts_targets() {
        let targets = vec![1.0, 2.0, 3.0];
        let f = manual_forest(vec![single_leaf_tree(vec![0, 1, 2], &targets)], targets, 1);
        assert_eq!(f.conditional_cdf(&[0.0], 2.0).unwrap(), 2.0 / 3.0);
        assert_eq!(f.conditional_cdf(&[0.0], 0.5).unwrap(), 0.0);
        assert!((f.conditional_cdf(&[0.0], 3.0).unwrap() - 1.0).abs() <= 1e-12);
        assert!((f.conditional_cdf(&[0.0], 99.0).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn quantiles_of_uniform_weights() {
        let targets = vec![1.0, 2.0, 3.0];
        let f = manual_forest(vec![single_leaf_tree(vec![0, 1, 2], &targets)], targets, 1);
        // cdf steps: 1/3 at 1, 2/3 at 2, 1 at 3.
        assert_eq!(f.quantile(&[0.0], 0.5).unwrap(), 2.0);
        assert_eq!(f.quantile(&[0.0], 0.01).unwrap(), 1.0);
        assert_eq!(f.quantile(&[0.0], 0.99).unwrap(), 3.0);
        assert!(f.quantile(&[0.0], 0.0).is_err());
        assert!(f.quantile(&[0.0], 1.0).is_err());
    }

    #[test]
    fn weighted_quantile_matches_hand_computation() {
        // weights 0.2 at 5, 0.5 at 1, 0.3 at 9: sorted targets (1, 5, 9)
        // cumulate to (0.5, 0.7, 1.0), so the 0.6 quantile is 5.
        let w = WeightVector::from_entries(vec![(0, 0.2), (1, 0.5), (2, 0.3)]).unwrap();
        let dist = WeightedDistribution::new(&w, &[5.0, 1.0, 9.0]);
        assert_eq!(dist.quantile(0.6), 5.0);
        assert_eq!(dist.quantile(0.5), 1.0);
        assert_eq!(dist.quantile(0.71), 9.0);
    }

    #[test]
    fn quantile_is_monotone_in_p() {
        let mut rng = stream_rng(33, "monotone", 0);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random()]).collect();
        let targets: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let f = QuantileForest::fit(&m, &targets, &ForestParams { n_trees: 5, min_leaf_size: 2, ..ForestParams::default() })
            .unwrap();
        let dist = f.distribution(&[0.5]).unwrap();
        let mut last = f64::NEG_INFINITY;
        for i in 0..=20 {
            let q = dist.quantile(f64::from(i) / 20.0);
            assert!(q >= last, "quantile decreased at p={}", f64::from(i) / 20.0);
            last = q;
        }
    }

    #[test]
    fn replacing_targets_shifts_quantiles() {
        let mut rng = stream_rng(8, "shift", 0);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random()]).collect();
        let targets: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let f = QuantileForest::fit(&m, &targets, &ForestParams { n_trees: 4, min_leaf_size: 3, ..ForestParams::default() })
            .unwrap();
        let shifted = f.with_targets(targets.iter().map(|t| t + 2.5).collect()).unwrap();
        for p in [0.1, 0.5, 0.9] {
            let q0 = f.quantile(&[0.3], p).unwrap();
            let q1 = shifted.quantile(&[0.3], p).unwrap();
            assert!((q1 - (q0 + 2.5)).abs() <= 1e-12, "shift broken at p={p}");
        }
        assert!((shifted.predict_mean(&[0.3]).unwrap()
            - (f.predict_mean(&[0.3]).unwrap() + 2.5))
            .abs()
            <= 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let targets = vec![1.0, 2.0];
        let f = manual_forest(vec![single_leaf_tree(vec![0, 1], &targets)], targets, 2);
        assert!(f.predict_mean(&[1.0]).is_err());
        assert!(f.leaf_weights(&[1.0, 2.0, 3.0]).is_err());
    }
}
