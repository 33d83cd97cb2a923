//! Random forest of Gini classification trees.
//!
//! Each tree is fit on a bootstrap sample with a fresh random feature subset
//! at every split. Tree `t` draws from its own stream derived from the
//! forest seed, so trees can be grown in parallel without changing results.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::gbt::midpoint;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 200,
            max_features: None,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Fraction of positive training rows that reached the leaf.
    Leaf { positive_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationTree {
    pub nodes: Vec<ClassNode>,
}

impl ClassificationTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                ClassNode::Leaf { positive_fraction } => return *positive_fraction,
                ClassNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] < *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel {
    pub trees: Vec<ClassificationTree>,
    pub n_trees: usize,
    pub max_features: usize,
    pub seed: u64,
    pub n_features: usize,
    pub feature_names: Vec<String>,
}

#[inline]
fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a [u8],
    max_features: usize,
    params: &'a RfParams,
    nodes: Vec<ClassNode>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let pos = rows.iter().filter(|&&i| self.y[i] == 1).count();
        self.nodes.push(ClassNode::Leaf {
            positive_fraction: pos as f64 / n as f64,
        });
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if pos == 0 || pos == n || n < self.params.min_samples_split || !depth_ok {
            return id;
        }
        let d = self.x.cols();
        let mut feats = sample(rng, d, self.max_features.min(d)).into_vec();
        feats.sort_unstable();

        // (weighted child impurity, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.clone();
        for &f in &feats {
            order.sort_by(|&a, &b| self.x.get(a, f).total_cmp(&self.x.get(b, f)).then(a.cmp(&b)));
            let mut left_pos = 0usize;
            for k in 0..n - 1 {
                left_pos += usize::from(self.y[order[k]] == 1);
                let (lo, hi) = (self.x.get(order[k], f), self.x.get(order[k + 1], f));
                if lo == hi {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let imp = (nl * gini(left_pos as f64, nl) + nr * gini((pos - left_pos) as f64, nr)) / n as f64;
                if best.is_none_or(|b| imp < b.0) {
                    best = Some((imp, f, midpoint(lo, hi)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x.get(i, feature) < threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = ClassNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

pub fn fit_random_forest(x: &Matrix, y: &[u8], params: &RfParams) -> Result<RfModel> {
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::data("cannot fit a forest on zero rows"));
    }
    if params.n_trees == 0 {
        return Err(Error::arg("n_trees must be at least 1"));
    }
    if !x.all_finite() {
        return Err(Error::numeric("non-finite value in forest input"));
    }
    let d = x.cols();
    let max_features = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d.max(1));
    let trees = params.execution.map(params.n_trees, |t| {
        let mut rng = seed::derived_rng(params.seed, "forest_tree", t as u64);
        let rows: Vec<usize> = if params.bootstrap {
            (0..x.rows()).map(|_| rng.random_range(0..x.rows())).collect()
        } else {
            (0..x.rows()).collect()
        };
        let mut b = TreeBuilder {
            x,
            y,
            max_features,
            params,
            nodes: Vec::new(),
        };
        b.grow(rows, 0, &mut rng);
        ClassificationTree { nodes: b.nodes }
    });
    Ok(RfModel {
        trees,
        n_trees: params.n_trees,
        max_features,
        seed: params.seed,
        n_features: d,
        feature_names: (0..d).map(|j| format!("f{j}")).collect(),
    })
}

impl RfModel {
    /// Mean of the trees' leaf outputs.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                actual: x.cols(),
            });
        }
        let k = self.trees.len() as f64;
        Ok(x.iter_rows()
            .map(|r| self.trees.iter().map(|t| t.predict_row(r)).sum::<f64>() / k)
            .collect())
    }
}
