//! Second-order gradient boosted trees on the logistic loss.
//!
//! Each tree is grown depth-wise from per-row gradient `g = p - y` and
//! hessian `h = p (1 - p)`. A split's gain is
//! `1/2 [GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda)] - gamma`
//! and only strictly positive gains are accepted. Leaves hold
//! `-G/(H+lambda)` scaled by the learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Initial log-odds; `None` uses the logit of the training base rate.
    pub base_score: Option<f64>,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            reg_lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            base_score: None,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// Binary regression tree; node 0 is the root. Rows with
/// `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value } => Some(*value),
            _ => None,
        })
    }

    /// Every internal node points at existing children.
    pub fn is_well_formed(&self) -> bool {
        !self.nodes.is_empty()
            && self.nodes.iter().all(|n| match n {
                TreeNode::Split { left, right, .. } => *left < self.nodes.len() && *right < self.nodes.len(),
                TreeNode::Leaf { .. } => true,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
}

#[inline]
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let g = gl + gr;
    let h = hl + hr;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma
}

#[inline]
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

/// Split point between two consecutive distinct values; always `> lo`.
#[inline]
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = (lo + hi) / 2.0;
    if m > lo {
        m
    } else {
        hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Best split of `rows` over all features and midpoint thresholds. Ties in
/// gain go to the lower feature index, then the lower threshold. Returns
/// `None` when no candidate has positive gain.
pub fn best_split(
    x: &Matrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    params: &GbtParams,
) -> Option<SplitCandidate> {
    let g_total: f64 = rows.iter().map(|&i| grad[i]).sum();
    let h_total: f64 = rows.iter().map(|&i| hess[i]).sum();
    let per_feature = params.execution.map(x.cols(), |f| {
        let mut order = rows.to_vec();
        order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        let mut best: Option<SplitCandidate> = None;
        let (mut gl, mut hl) = (0.0, 0.0);
        for k in 0..order.len().saturating_sub(1) {
            let i = order[k];
            gl += grad[i];
            hl += hess[i];
            let (lo, hi) = (x.get(i, f), x.get(order[k + 1], f));
            if lo == hi {
                continue;
            }
            let (gr, hr) = (g_total - gl, h_total - hl);
            if hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, params.reg_lambda, params.gamma);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    gain,
                });
            }
        }
        best
    });
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<SplitCandidate>, c| match acc {
            Some(a) if a.gain >= c.gain => Some(a),
            _ => Some(c),
        })
}

fn grow(
    x: &Matrix,
    rows: Vec<usize>,
    depth: usize,
    grad: &[f64],
    hess: &[f64],
    params: &GbtParams,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let id = nodes.len();
    nodes.push(TreeNode::Leaf { value: 0.0 });
    let split = if depth < params.max_depth && rows.len() >= 2 {
        best_split(x, &rows, grad, hess, params)
    } else {
        None
    };
    match split {
        Some(s) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| x.get(i, s.feature) < s.threshold);
            let left = grow(x, l, depth + 1, grad, hess, params, nodes);
            let right = grow(x, r, depth + 1, grad, hess, params, nodes);
            nodes[id] = TreeNode::Split {
                feature: s.feature,
                threshold: s.threshold,
                left,
                right,
                gain: s.gain,
            };
        }
        None => {
            let g: f64 = rows.iter().map(|&i| grad[i]).sum();
            let h: f64 = rows.iter().map(|&i| hess[i]).sum();
            nodes[id] = TreeNode::Leaf {
                value: params.learning_rate * leaf_weight(g, h, params.reg_lambda),
            };
        }
    }
    id
}

/// Grows one tree on fixed gradient statistics.
pub fn fit_tree(x: &Matrix, grad: &[f64], hess: &[f64], params: &GbtParams) -> RegressionTree {
    let mut nodes = Vec::new();
    grow(x, (0..x.rows()).collect(), 0, grad, hess, params, &mut nodes);
    RegressionTree { nodes }
}

pub fn fit_gbt(x: &Matrix, y: &[u8], params: &GbtParams) -> Result<GbtModel> {
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    if x.rows() < 2 {
        return Err(Error::data("gradient boosting needs at least two rows"));
    }
    if !x.all_finite() {
        return Err(Error::numeric("non-finite value in boosting input"));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::arg("learning_rate must lie in (0, 1]"));
    }
    if params.reg_lambda < 0.0 {
        return Err(Error::arg("reg_lambda must be non-negative"));
    }
    let base_score = params.base_score.unwrap_or_else(|| {
        let p = (y.iter().map(|&v| f64::from(v)).sum::<f64>() / y.len() as f64).clamp(1e-6, 1.0 - 1e-6);
        (p / (1.0 - p)).ln()
    });
    let mut margin = vec![base_score; x.rows()];
    let mut grad = vec![0.0; x.rows()];
    let mut hess = vec![0.0; x.rows()];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..x.rows() {
            let p = sigmoid(margin[i]);
            grad[i] = p - f64::from(y[i]);
            hess[i] = p * (1.0 - p);
        }
        let tree = fit_tree(x, &grad, &hess, params);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }
    Ok(GbtModel {
        trees,
        learning_rate: params.learning_rate,
        base_score,
        reg_lambda: params.reg_lambda,
        gamma: params.gamma,
        max_depth: params.max_depth,
        n_features: x.cols(),
        feature_names: (0..x.cols()).map(|j| format!("f{j}")).collect(),
    })
}

impl GbtModel {
    pub fn predict_margin(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                actual: x.cols(),
            });
        }
        Ok(x.iter_rows()
            .map(|r| self.base_score + self.trees.iter().map(|t| t.predict_row(r)).sum::<f64>())
            .collect())
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.predict_margin(x)?.into_iter().map(sigmoid).collect())
    }
}

/// Total split gain per feature, descending (ties by feature index).
/// Features never split on are omitted.
pub fn gbt_importance(m: &GbtModel) -> Vec<(String, f64)> {
    let mut total = vec![0.0; m.n_features];
    let mut used = vec![false; m.n_features];
    for t in &m.trees {
        for n in &t.nodes {
            if let TreeNode::Split { feature, gain, .. } = n {
                total[*feature] += gain;
                used[*feature] = true;
            }
        }
    }
    let mut r: Vec<(usize, f64)> = (0..m.n_features).filter(|&j| used[j]).map(|j| (j, total[j])).collect();
    r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    r.into_iter().map(|(j, g)| (m.feature_names[j].clone(), g)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_negative_labels_give_tiny_probabilities() {
        let x = Matrix::new(6, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let m = fit_gbt(&x, &[0; 6], &GbtParams::default()).unwrap();
        assert!(m.predict_proba(&x).unwrap().iter().all(|&p| p < 0.01));
        assert!(fit_gbt(&Matrix::zeros(1, 1), &[0], &GbtParams::default()).is_err());
    }

    #[test]
    fn zero_tree_model_is_sigmoid_of_base() {
        let m = GbtModel {
            trees: vec![],
            learning_rate: 0.1,
            base_score: 0.7,
            reg_lambda: 1.0,
            gamma: 0.0,
            max_depth: 3,
            n_features: 2,
            feature_names: vec!["a".into(), "b".into()],
        };
        let p = m.predict_proba(&Matrix::zeros(3, 2)).unwrap();
        assert!(p.iter().all(|&v| v == sigmoid(0.7)));
        assert!(gbt_importance(&m).is_empty());
    }

    #[test]
    fn perfect_feature_is_chosen_first_with_hand_computed_gain() {
        // feature 1 separates; feature 0 is uninformative
        let x = Matrix::new(4, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let y = [0, 0, 1, 1];
        let params = GbtParams {
            n_trees: 1,
            max_depth: 1,
            min_child_weight: 0.0,
            ..Default::default()
        };
        let m = fit_gbt(&x, &y, &params).unwrap();
        // base rate 0.5: g = -/+0.5, h = 0.25. GL = 1, HL = 0.5, GR = -1, HR = 0.5, G = 0
        let expected = 0.5 * (1.0 / 1.5 + 1.0 / 1.5 - 0.0);
        match m.trees[0].nodes[0] {
            TreeNode::Split {
                feature,
                threshold,
                gain,
                ..
            } => {
                assert_eq!(feature, 1);
                assert_eq!(threshold, 0.5);
                assert!((gain - expected).abs() < 1e-15);
            }
            _ => panic!("root should split"),
        }
    }

    #[test]
    fn leaf_magnitude_shrinks_with_lambda() {
        for &(g, h) in &[(3.0, 2.0), (-1.5, 0.25), (0.2, 4.0)] {
            let mut prev = f64::INFINITY;
            for lambda in [0.0, 0.5, 1.0, 2.0, 10.0] {
                let w = leaf_weight(g, h, lambda).abs();
                assert!(w <= prev);
                prev = w;
            }
        }
    }

    #[test]
    fn importance_sums_to_total_gain_and_trees_are_well_formed() {
        let x = Matrix::new(8, 2, vec![0.0, 3.0, 1.0, 1.0, 2.0, 4.0, 3.0, 1.0, 4.0, 5.0, 5.0, 9.0, 6.0, 2.0, 7.0, 6.0]).unwrap();
        let y = [0, 0, 0, 1, 0, 1, 1, 1];
        let m = fit_gbt(&x, &y, &GbtParams { n_trees: 5, min_child_weight: 0.0, ..Default::default() }).unwrap();
        let total: f64 = m
            .trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|n| match n {
                TreeNode::Split { gain, .. } => Some(*gain),
                _ => None,
            })
            .sum();
        let imp = gbt_importance(&m);
        assert!((imp.iter().map(|(_, g)| g).sum::<f64>() - total).abs() < 1e-12);
        assert!(imp.iter().all(|(_, g)| *g > 0.0));
        assert!(m.trees.iter().all(RegressionTree::is_well_formed));
    }
}
