//! Random forest of CART classification trees with Gini splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarError;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class counts of the training samples reaching this leaf.
    Leaf { histogram: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf { histogram } => return histogram,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_classes: usize,
    pub n_features: usize,
    pub n_trees: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

/// Per-tree seed derived from the forest seed and the tree index.
fn tree_seed(seed: u64, tree: usize) -> u64 {
    seed ^ (tree as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn gini(counts: &[u32], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    min_leaf: usize,
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn histogram(&self, idx: &[usize]) -> Vec<u32> {
        let mut h = vec![0u32; self.n_classes];
        for &i in idx {
            h[self.y[i]] += 1;
        }
        h
    }

    /// Best `(feature, threshold, weighted impurity)` over at least
    /// `max_features` random features, drawing more while none splits.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let n_features = self.x[0].len();
        let mut features: Vec<usize> = (0..n_features).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.max_features && best.is_some() {
                break;
            }
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0u32; self.n_classes];
            let mut right = self.histogram(&order);
            let n = order.len();
            for k in 0..n - 1 {
                let c = self.y[order[k]];
                left[c] += 1;
                right[c] -= 1;
                let (nl, nr) = (k + 1, n - k - 1);
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let (a, b) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if a == b {
                    continue;
                }
                let score = (nl as f64 * gini(&left, nl as u32)
                    + nr as f64 * gini(&right, nr as u32))
                    / n as f64;
                if best.is_none_or(|(_, _, s)| score < s) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some((f, threshold, score));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>) -> usize {
        let hist = self.histogram(&idx);
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { histogram: hist });
        if pure || idx.len() < 2 * self.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Train on bootstrap resamples; deterministic for a given seed, whether
/// trees are grown in parallel or not.
pub fn forest_train(
    features: &[Vec<f64>],
    labels: &[usize],
    cfg: &ForestConfig,
) -> Result<ForestModel, HarError> {
    if features.len() != labels.len() {
        return Err(HarError::LengthMismatch(features.len(), labels.len()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; n_classes];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(HarError::SingleClass);
    }
    let n_features = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != n_features) {
        return Err(HarError::DimensionMismatch(n_features, bad.len()));
    }
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(HarError::InvalidParameter(
            "n_trees and min_leaf must be >= 1".into(),
        ));
    }
    let max_features = ((n_features as f64).sqrt().round() as usize).max(1);
    let n = features.len();
    let trees = par::map_range(cfg.n_trees, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(cfg.seed, t));
        let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut b = Builder {
            x: features,
            y: labels,
            n_classes,
            min_leaf: cfg.min_leaf,
            max_features,
            rng,
            nodes: Vec::new(),
        };
        b.grow(sample);
        Tree { nodes: b.nodes }
    });
    Ok(ForestModel {
        trees,
        n_classes,
        n_features,
        n_trees: cfg.n_trees,
        min_leaf: cfg.min_leaf,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// Mean of normalized leaf histograms, one row per sample.
    pub probabilities: Vec<Vec<f64>>,
}

fn argmax(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

/// Majority vote over trees (ties to the lower class index).
pub fn forest_predict(model: &ForestModel, features: &[Vec<f64>]) -> Result<Prediction, HarError> {
    if let Some(bad) = features.iter().find(|f| f.len() != model.n_features) {
        return Err(HarError::DimensionMismatch(model.n_features, bad.len()));
    }
    let rows = par::map(features, |x| {
        let mut votes = vec![0.0; model.n_classes];
        let mut prob = vec![0.0; model.n_classes];
        for tree in &model.trees {
            let h = tree.leaf(x);
            let total: u32 = h.iter().sum();
            votes[argmax(h.iter().map(|&c| c as f64))] += 1.0;
            for (p, &c) in prob.iter_mut().zip(h) {
                *p += c as f64 / total as f64 / model.trees.len() as f64;
            }
        }
        (argmax(votes.into_iter()), prob)
    });
    let (labels, probabilities) = rows.into_iter().unzip();
    Ok(Prediction {
        labels,
        probabilities,
    })
}
