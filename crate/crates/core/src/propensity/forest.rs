//! Random forest classifier (bootstrap-sampled CART trees, Gini impurity)
//! with Platt-scaled output.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, sigmoid, LogisticModel, LogisticOptions};
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means ⌊√d⌋ (at least 1).
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 5,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: ArrayView1<f64>) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(p) => return *p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    labels: &'a [bool],
    params: ForestParams,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf_value(&self, samples: &[usize]) -> f64 {
        samples.iter().filter(|&&s| self.labels[s]).count() as f64 / samples.len() as f64
    }

    /// Best (weighted impurity, threshold) split on `feature`, if any split
    /// leaves `min_leaf` samples on both sides.
    fn best_split(&self, samples: &[usize], feature: usize, buf: &mut Vec<(f64, bool)>) -> Option<(f64, f64)> {
        let col = &self.columns[feature];
        buf.clear();
        buf.extend(samples.iter().map(|&s| (col[s], self.labels[s])));
        buf.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = buf.len();
        let total_pos = buf.iter().filter(|p| p.1).count() as f64;
        let min_leaf = self.params.min_leaf.max(1);
        let mut left_pos = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            if buf[i].1 {
                left_pos += 1.0;
            }
            let nl = (i + 1) as f64;
            let nr = (n - i - 1) as f64;
            if i + 1 < min_leaf || n - i - 1 < min_leaf || buf[i].0 == buf[i + 1].0 {
                continue;
            }
            let right_pos = total_pos - left_pos;
            // n · gini = 2 · pos · (n − pos) / n per side
            let impurity = 2.0 * left_pos * (nl - left_pos) / nl + 2.0 * right_pos * (nr - right_pos) / nr;
            if best.is_none_or(|(b, _)| impurity < b) {
                let threshold = 0.5 * (buf[i].0 + buf[i + 1].0);
                best = Some((impurity, threshold));
            }
        }
        best
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut crate::rng::Rng) -> usize {
        let id = self.nodes.len();
        let value = self.leaf_value(&samples);
        self.nodes.push(Node::Leaf(value));
        let pure = value == 0.0 || value == 1.0;
        let depth_capped = self.params.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_capped || samples.len() < 2 * self.params.min_leaf.max(1) {
            return id;
        }

        let mut features: Vec<usize> = (0..self.columns.len()).collect();
        features.shuffle(rng);
        let mut buf = Vec::with_capacity(samples.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.best_split(&samples, f, &mut buf) {
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let col = &self.columns[feature];
        let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&s| col[s] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Fitted forest with its Platt calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    platt: LogisticModel,
}

impl Forest {
    /// Mean leaf class-1 fraction over all trees.
    pub fn vote_fraction(&self, row: ArrayView1<f64>) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn calibrate(&self, vote: f64) -> f64 {
        sigmoid(self.platt.intercept + self.platt.coef[0] * vote)
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| self.calibrate(self.vote_fraction(r)))
            .collect()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Fits the forest and its Platt calibration. Returns the forest and the
/// calibrated in-sample probabilities, computed from out-of-bag votes (a
/// sample that is in-bag for every tree falls back to the full-forest vote).
pub fn fit_forest(x: &Array2<f64>, labels: &[bool], params: &ForestParams, seed: u64) -> Result<(Forest, Vec<f64>)> {
    let (n, d) = x.dim();
    if n != labels.len() || n == 0 {
        return Err(Error::Validation("forest inputs disagree in length".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::Config("rf_trees must be at least 1".into()));
    }
    let columns: Vec<Vec<f64>> = (0..d).map(|j| x.column(j).to_vec()).collect();
    let mtry = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d.max(1));

    let grown: Vec<(Tree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(seed, &[stream::TREE, t as u64]);
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut in_bag = vec![false; n];
            sample.iter().for_each(|&s| in_bag[s] = true);
            let mut b = Builder {
                columns: &columns,
                labels,
                params: *params,
                mtry,
                nodes: Vec::new(),
            };
            if d > 0 {
                b.grow(sample, 0, &mut rng);
            } else {
                let v = b.leaf_value(&sample);
                b.nodes.push(Node::Leaf(v));
            }
            (Tree { nodes: b.nodes }, in_bag)
        })
        .collect();

    let mut oob_sum = vec![0.0f64; n];
    let mut oob_count = vec![0usize; n];
    let mut full_sum = vec![0.0f64; n];
    for (tree, in_bag) in &grown {
        for (i, row) in x.rows().into_iter().enumerate() {
            let p = tree.predict(row);
            full_sum[i] += p;
            if !in_bag[i] {
                oob_sum[i] += p;
                oob_count[i] += 1;
            }
        }
    }
    let votes: Vec<f64> = (0..n)
        .map(|i| {
            if oob_count[i] > 0 {
                oob_sum[i] / oob_count[i] as f64
            } else {
                full_sum[i] / grown.len() as f64
            }
        })
        .collect();

    // Platt's smoothed targets keep the 1-D fit finite on separable votes.
    let n_pos = labels.iter().filter(|&&t| t).count() as f64;
    let n_neg = n as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&t| if t { hi } else { lo }).collect();
    let vx = Array2::from_shape_vec((n, 1), votes.clone()).expect("shape");
    let ones = vec![1.0; n];
    let mut platt = fit_logistic(&vx, &targets, &ones, &LogisticOptions::default())?;
    // Held-out votes of uninformative trees anti-correlate with the label
    // (a sample's own label is missing from the leaves scoring it). The
    // calibration map must be non-decreasing, so such a slope is dropped.
    if platt.coef[0] < 0.0 {
        let intercept_only = fit_logistic(&Array2::zeros((n, 0)), &targets, &ones, &LogisticOptions::default())?;
        platt = LogisticModel {
            intercept: intercept_only.intercept,
            coef: vec![0.0],
            iterations: intercept_only.iterations,
        };
    }

    let forest = Forest {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        platt,
    };
    let calibrated = votes.iter().map(|&v| forest.calibrate(v)).collect();
    Ok((forest, calibrated))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor(n: usize, seed: u64) -> (Array2<f64>, Vec<bool>) {
        let mut rng = rng_from(seed, &[]);
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            y.push((a > 0.0) != (b > 0.0));
        }
        (x, y)
    }

    #[test]
    fn learns_xor() {
        let (x, y) = xor(400, 1);
        let (forest, oob) = fit_forest(&x, &y, &ForestParams::default(), 9).unwrap();
        let acc = oob.iter().zip(&y).filter(|(p, &t)| (**p >= 0.5) == t).count() as f64 / y.len() as f64;
        assert!(acc > 0.85, "oob accuracy {acc}");
        assert_eq!(forest.n_trees(), 100);
    }

    #[test]
    fn stump_has_two_calibrated_levels() {
        let x = Array2::from_shape_fn((40, 1), |(i, _)| i as f64);
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let params = ForestParams {
            n_trees: 1,
            max_depth: Some(1),
            ..Default::default()
        };
        let (forest, scores) = fit_forest(&x, &y, &params, 3).unwrap();
        let mut levels = scores.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        assert_eq!(levels.len(), 2, "{levels:?}");
        let preds = forest.predict_proba(&x);
        let mut p = preds.clone();
        p.sort_by(f64::total_cmp);
        p.dedup();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn constant_features_give_prevalence() {
        let x = Array2::zeros((200, 3));
        let y: Vec<bool> = (0..200).map(|i| i % 4 == 0).collect();
        let (_, scores) = fit_forest(&x, &y, &ForestParams::default(), 5).unwrap();
        for s in scores {
            assert!((s - 0.25).abs() < 0.02, "{s}");
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let (x, y) = xor(100, 2);
        let a = fit_forest(&x, &y, &ForestParams::default(), 4).unwrap();
        let b = fit_forest(&x, &y, &ForestParams::default(), 4).unwrap();
        assert_eq!(a, b);
    }
}
