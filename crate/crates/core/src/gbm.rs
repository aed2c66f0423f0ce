//! Least-squares gradient-boosted regression trees.
//!
//! Trees are grown level by level with exact greedy splits over presorted
//! feature columns. Training data is put into a canonical order first, so the
//! fitted model does not depend on the order samples are supplied in.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::r_squared;

pub const GBM_FORMAT_VERSION: &str = "gbm/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    Identity,
    Log,
}

impl TargetTransform {
    fn forward(self, y: f64) -> f64 {
        match self {
            TargetTransform::Identity => y,
            TargetTransform::Log => y.ln(),
        }
    }

    fn inverse(self, z: f64) -> f64 {
        match self {
            TargetTransform::Identity => z,
            TargetTransform::Log => z.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbmConfig {
    pub num_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub target_transform: TargetTransform,
    pub random_search_budget: usize,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self {
            num_trees: 100,
            learning_rate: 0.1,
            max_depth: 4,
            min_samples_leaf: 20,
            target_transform: TargetTransform::Log,
            random_search_budget: 0,
            seed: 0,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Training(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::Training("max_depth must be positive".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Training("min_samples_leaf must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    /// Samples with `x[feature] <= threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn check(&self, feature_dim: usize) -> bool {
        match self {
            TreeNode::Leaf { value } => value.is_finite(),
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => *feature < feature_dim && threshold.is_finite() && left.check(feature_dim) && right.check(feature_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub base_score: f64,
    pub trees: Vec<TreeNode>,
    pub config: GbmConfig,
    pub feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GbmDocument {
    version: String,
    #[serde(flatten)]
    model: GbmModel,
}

impl GbmModel {
    /// A model with no trees that predicts `value` everywhere.
    pub fn constant(value: f64, feature_dim: usize, transform: TargetTransform) -> Self {
        Self {
            base_score: transform.forward(value),
            trees: Vec::new(),
            config: GbmConfig {
                num_trees: 0,
                target_transform: transform,
                ..GbmConfig::default()
            },
            feature_dim,
        }
    }

    /// Prediction on the transformed scale.
    pub fn raw_score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_dim {
            return Err(Error::Prediction(format!(
                "expected {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        let boost: f64 = self.trees.iter().map(|t| t.predict(features)).sum();
        Ok(self.base_score + self.config.learning_rate * boost)
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        Ok(self.config.target_transform.inverse(self.raw_score(features)?))
    }

    pub fn to_json(&self) -> Result<String> {
        self.to_json_value().and_then(|v| {
            serde_json::to_string_pretty(&v).map_err(|e| Error::Serialization(e.to_string()))
        })
    }

    pub fn to_json_value(&self) -> Result<serde_json::Value> {
        serde_json::to_value(GbmDocument {
            version: GBM_FORMAT_VERSION.into(),
            model: self.clone(),
        })
        .map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        Self::from_json_value(value)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let doc: GbmDocument = serde_json::from_value(value).map_err(|e| Error::Serialization(e.to_string()))?;
        if doc.version != GBM_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model version `{}` (expected `{GBM_FORMAT_VERSION}`)",
                doc.version
            )));
        }
        let m = doc.model;
        if !m.base_score.is_finite() || !m.trees.iter().all(|t| t.check(m.feature_dim)) {
            return Err(Error::Serialization("model contains invalid tree nodes".into()));
        }
        Ok(m)
    }
}

// ---------------------------------------------------------------------------
// Training

struct Columns {
    /// Column-major features in canonical sample order.
    values: Vec<Vec<f64>>,
    /// Per feature, sample indices ascending by value (ties by index).
    order: Vec<Vec<u32>>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

enum Building {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn mean(values: &[f64]) -> f64 {
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return first;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Split point between two adjacent distinct values `lo < hi`; always `>= lo`
/// and `< hi`, so `x <= threshold` reproduces the sorted partition.
fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

pub fn fit<F: AsRef<[f64]>>(features: &[F], targets: &[f64], config: &GbmConfig) -> Result<GbmModel> {
    config.validate()?;
    let n = features.len();
    if n != targets.len() {
        return Err(Error::Training(format!(
            "{} feature rows but {} targets",
            n,
            targets.len()
        )));
    }
    if n < 2 {
        return Err(Error::Training(format!("need at least 2 samples, got {n}")));
    }
    if n < config.min_samples_leaf {
        return Err(Error::Training(format!(
            "{n} samples is fewer than min_samples_leaf = {}",
            config.min_samples_leaf
        )));
    }
    let feature_dim = features[0].as_ref().len();
    if let Some(bad) = features.iter().position(|f| f.as_ref().len() != feature_dim) {
        return Err(Error::Training(format!("row {bad} has a different feature dimension")));
    }
    if features.iter().flat_map(|f| f.as_ref()).any(|v| !v.is_finite()) {
        return Err(Error::Training("features must be finite".into()));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::Training("targets must be finite".into()));
    }
    let transform = config.target_transform;
    if transform == TargetTransform::Log {
        if let Some(t) = targets.iter().find(|&&t| t <= 0.0) {
            return Err(Error::Training(format!("log target transform needs positive targets, got {t}")));
        }
    }

    // Canonical order makes the fit independent of input order.
    let mut canon: Vec<usize> = (0..n).collect();
    canon.sort_by(|&a, &b| {
        cmp_rows(features[a].as_ref(), features[b].as_ref()).then(targets[a].total_cmp(&targets[b]))
    });
    let y: Vec<f64> = canon.iter().map(|&i| transform.forward(targets[i])).collect();
    let rows: Vec<&[f64]> = canon.iter().map(|&i| features[i].as_ref()).collect();
    let values: Vec<Vec<f64>> = (0..feature_dim)
        .map(|f| rows.iter().map(|r| r[f]).collect())
        .collect();
    let order = values
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let cols = Columns { values, order };

    let base_score = mean(&y);
    let mut pred = vec![base_score; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.num_trees);
    for _ in 0..config.num_trees {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        let tree = grow_tree(&cols, &residual, config);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += config.learning_rate * tree.predict(rows[i]);
        }
        trees.push(tree);
    }

    Ok(GbmModel {
        base_score,
        trees,
        config: config.clone(),
        feature_dim,
    })
}

fn grow_tree(cols: &Columns, residual: &[f64], config: &GbmConfig) -> TreeNode {
    let n = residual.len();
    let msl = config.min_samples_leaf;
    let mut nodes: Vec<Building> = vec![Building::Leaf(0.0)];
    let mut node_of = vec![0u32; n];
    let mut sums = vec![residual.iter().sum::<f64>()];
    let mut counts = vec![n];
    let mut frontier = vec![0usize];

    for _ in 0..config.max_depth {
        if frontier.is_empty() {
            break;
        }
        // Map node id -> slot within the frontier.
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, &id) in frontier.iter().enumerate() {
            slot[id] = s;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        let parent_score: Vec<f64> = frontier.iter().map(|&id| sums[id] * sums[id] / counts[id] as f64).collect();

        for (f, order) in cols.order.iter().enumerate() {
            let col = &cols.values[f];
            let mut left_sum = vec![0.0; frontier.len()];
            let mut left_cnt = vec![0usize; frontier.len()];
            let mut last = vec![f64::NAN; frontier.len()];
            for &i in order {
                let i = i as usize;
                let s = slot[node_of[i] as usize];
                if s == usize::MAX {
                    continue;
                }
                let v = col[i];
                let id = frontier[s];
                let lc = left_cnt[s];
                if lc > 0 && v > last[s] && lc >= msl && counts[id] - lc >= msl {
                    let ls = left_sum[s];
                    let rs = sums[id] - ls;
                    let rc = counts[id] - lc;
                    let gain = ls * ls / lc as f64 + rs * rs / rc as f64 - parent_score[s];
                    let better = match best[s] {
                        None => true,
                        Some(c) => gain > c.gain,
                    };
                    if better {
                        best[s] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold: split_threshold(last[s], v),
                        });
                    }
                }
                left_sum[s] += residual[i];
                left_cnt[s] += 1;
                last[s] = v;
            }
        }

        let mut next = Vec::new();
        let mut children = vec![None; frontier.len()];
        for (s, &id) in frontier.iter().enumerate() {
            let Some(c) = best[s] else { continue };
            // Relative floor keeps round-off from producing spurious splits.
            let floor = 1e-12 * (1.0 + parent_score[s].abs());
            if !(c.gain > floor) {
                continue;
            }
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Building::Leaf(0.0));
            nodes.push(Building::Leaf(0.0));
            sums.extend([0.0, 0.0]);
            counts.extend([0, 0]);
            nodes[id] = Building::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
            };
            children[s] = Some((c.feature, c.threshold, left, right));
            next.extend([left, right]);
        }
        if next.is_empty() {
            break;
        }
        for i in 0..n {
            let s = slot[node_of[i] as usize];
            if s == usize::MAX {
                continue;
            }
            if let Some((f, thr, l, r)) = children[s] {
                let child = if cols.values[f][i] <= thr { l } else { r };
                node_of[i] = child as u32;
                sums[child] += residual[i];
                counts[child] += 1;
            }
        }
        frontier = next;
    }

    for id in 0..nodes.len() {
        if let Building::Leaf(v) = &mut nodes[id] {
            *v = if counts[id] == 0 { 0.0 } else { sums[id] / counts[id] as f64 };
        }
    }
    assemble(&nodes, 0)
}

fn assemble(nodes: &[Building], id: usize) -> TreeNode {
    match nodes[id] {
        Building::Leaf(value) => TreeNode::Leaf { value },
        Building::Split {
            feature,
            threshold,
            left,
            right,
        } => TreeNode::Split {
            feature,
            threshold,
            left: Box::new(assemble(nodes, left)),
            right: Box::new(assemble(nodes, right)),
        },
    }
}

// ---------------------------------------------------------------------------
// Hyper-parameter search

/// Materialized fit/validation data for one rolling-origin fold.
#[derive(Debug, Clone, Default)]
pub struct FoldData {
    pub fit_features: Vec<Vec<f64>>,
    pub fit_targets: Vec<f64>,
    pub validate_features: Vec<Vec<f64>>,
    pub validate_targets: Vec<f64>,
}

pub const SEARCH_NUM_TREES: [usize; 4] = [50, 100, 200, 400];
pub const SEARCH_LEARNING_RATE: [f64; 4] = [0.03, 0.05, 0.1, 0.2];
pub const SEARCH_MAX_DEPTH: [usize; 5] = [2, 3, 4, 5, 6];
pub const SEARCH_MIN_SAMPLES_LEAF: [usize; 4] = [5, 10, 20, 40];

fn sample_config(base: &GbmConfig, rng: &mut ChaCha8Rng) -> GbmConfig {
    GbmConfig {
        num_trees: *SEARCH_NUM_TREES.choose(rng).unwrap(),
        learning_rate: *SEARCH_LEARNING_RATE.choose(rng).unwrap(),
        max_depth: *SEARCH_MAX_DEPTH.choose(rng).unwrap(),
        min_samples_leaf: *SEARCH_MIN_SAMPLES_LEAF.choose(rng).unwrap(),
        ..base.clone()
    }
}

/// Mean validation R² (raw target scale) across folds. Configurations that
/// cannot be fit on some fold score negative infinity.
pub fn cross_validate(folds: &[FoldData], config: &GbmConfig) -> Result<f64> {
    if folds.is_empty() {
        return Err(Error::Training("no validation folds".into()));
    }
    let mut total = 0.0;
    for fold in folds {
        let model = match fit(&fold.fit_features, &fold.fit_targets, config) {
            Ok(m) => m,
            Err(Error::Training(_)) => return Ok(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        };
        let preds = fold
            .validate_features
            .iter()
            .map(|x| model.predict(x))
            .collect::<Result<Vec<_>>>()?;
        total += r_squared(&preds, &fold.validate_targets)?;
    }
    Ok(total / folds.len() as f64)
}

/// Seeded random search over the documented grid.
///
/// Budget 0 returns `config` unchanged and budget 1 returns the single draw
/// unscored. Larger budgets also score `config` itself and keep it unless a
/// draw beats it; the first best candidate wins ties.
pub fn tune(folds: &[FoldData], config: &GbmConfig) -> Result<GbmConfig> {
    let budget = config.random_search_budget;
    if budget == 0 {
        return Ok(config.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draws: Vec<GbmConfig> = (0..budget).map(|_| sample_config(config, &mut rng)).collect();
    if budget == 1 {
        return Ok(draws.into_iter().next().unwrap());
    }
    let mut best = config.clone();
    let mut best_score = cross_validate(folds, config)?;
    for cand in draws {
        let score = cross_validate(folds, &cand)?;
        if score > best_score {
            best_score = score;
            best = cand;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(trees: usize, depth: usize, msl: usize, transform: TargetTransform) -> GbmConfig {
        GbmConfig {
            num_trees: trees,
            learning_rate: 0.5,
            max_depth: depth,
            min_samples_leaf: msl,
            target_transform: transform,
            ..GbmConfig::default()
        }
    }

    #[test]
    fn constant_target_is_reproduced() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let y = vec![0.3; 30];
        let m = fit(&x, &y, &cfg(10, 3, 2, TargetTransform::Identity)).unwrap();
        for row in &x {
            assert_eq!(m.predict(row).unwrap(), 0.3);
        }
        let logm = fit(&x, &vec![250_000.0; 30], &cfg(10, 3, 2, TargetTransform::Log)).unwrap();
        let p = logm.predict(&[3.0, 1.0]).unwrap();
        assert!((p - 250_000.0).abs() < 1e-12 * 250_000.0);
    }

    #[test]
    fn zero_trees_predicts_base() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let y = [1.0, 2.0, 3.0, 6.0];
        let m = fit(&x, &y, &cfg(0, 2, 1, TargetTransform::Identity)).unwrap();
        assert!(m.trees.is_empty());
        assert_eq!(m.predict(&[100.0]).unwrap(), 3.0);
    }

    #[test]
    fn step_function_is_learned() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 200.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] < 0.37 { 10.0 } else { 25.0 }).collect();
        let m = fit(&x, &y, &cfg(30, 1, 1, TargetTransform::Identity)).unwrap();
        let preds: Vec<f64> = x.iter().map(|r| m.predict(r).unwrap()).collect();
        assert!(r_squared(&preds, &y).unwrap() >= 0.99);
    }

    #[test]
    fn hand_walked_single_tree() {
        let x: Vec<Vec<f64>> = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let y = [1.0, 1.0, 5.0, 5.0];
        let mut c = cfg(1, 1, 1, TargetTransform::Identity);
        c.learning_rate = 0.5;
        let m = fit(&x, &y, &c).unwrap();
        // base 3, residuals (-2,-2,2,2), best split between 2 and 3.
        assert_eq!(m.base_score, 3.0);
        match &m.trees[0] {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                assert_eq!((*feature, *threshold), (0, 2.5));
                assert_eq!(**left, TreeNode::Leaf { value: -2.0 });
                assert_eq!(**right, TreeNode::Leaf { value: 2.0 });
            }
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(m.predict(&[1.5]).unwrap(), 3.0 + 0.5 * -2.0);
        assert_eq!(m.predict(&[3.5]).unwrap(), 3.0 + 0.5 * 2.0);
    }

    #[test]
    fn equal_gain_prefers_lowest_feature() {
        // Both features separate the targets identically.
        let x: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        let y = [1.0, 1.0, 3.0, 3.0];
        let m = fit(&x, &y, &cfg(1, 1, 1, TargetTransform::Identity)).unwrap();
        assert!(matches!(m.trees[0], TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn training_errors() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let c = cfg(5, 2, 1, TargetTransform::Log);
        assert!(matches!(fit(&x, &[1.0, 0.0, 2.0], &c), Err(Error::Training(_))));
        assert!(matches!(
            fit(&x, &[1.0, 2.0, 3.0], &cfg(5, 2, 4, TargetTransform::Log)),
            Err(Error::Training(_))
        ));
        assert!(matches!(fit(&x[..1], &[1.0], &c), Err(Error::Training(_))));
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let m = GbmModel::constant(2.0, 3, TargetTransform::Identity);
        assert!(matches!(m.predict(&[1.0]), Err(Error::Prediction(_))));
        assert_eq!(m.predict(&[0.0; 3]).unwrap(), 2.0);
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), i as f64 * 0.1]).collect();
        let y: Vec<f64> = x.iter().map(|r| 100.0 + 10.0 * r[0] + r[1].powi(2)).collect();
        let m = fit(&x, &y, &cfg(20, 3, 2, TargetTransform::Log)).unwrap();
        let back = GbmModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        for r in &x {
            assert_eq!(back.predict(r).unwrap().to_bits(), m.predict(r).unwrap().to_bits());
        }
        let foreign = m.to_json().unwrap().replace(GBM_FORMAT_VERSION, "gbm/99");
        assert!(matches!(GbmModel::from_json(&foreign), Err(Error::Serialization(_))));
    }

    #[test]
    fn tune_budget_edges() {
        let folds = vec![FoldData {
            fit_features: (0..60).map(|i| vec![i as f64]).collect(),
            fit_targets: (0..60).map(|i| 1.0 + i as f64).collect(),
            validate_features: (60..70).map(|i| vec![i as f64]).collect(),
            validate_targets: (60..70).map(|i| 1.0 + i as f64).collect(),
        }];
        let base = GbmConfig::default();
        assert_eq!(tune(&folds, &base).unwrap(), base);

        let one = GbmConfig {
            random_search_budget: 1,
            seed: 11,
            ..GbmConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(tune(&folds, &one).unwrap(), sample_config(&one, &mut rng));
    }
}
