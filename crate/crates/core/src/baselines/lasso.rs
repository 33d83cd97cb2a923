//! Linear LASSO by cyclic coordinate descent, used for feature screening.
//!
//! Objective: `1/(2n) |y - Xw - b|^2 + lambda |w|_1`, intercept unpenalised.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub feature_names: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    /// Objective value after every completed sweep.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_history: Vec<f64>,
}

#[inline]
pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

pub fn lasso_objective(x: &Matrix, y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = x.rows() as f64;
    let rss: f64 = x
        .iter_rows()
        .zip(y)
        .map(|(r, &t)| {
            let e = t - b - r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            e * e
        })
        .sum();
    rss / (2.0 * n) + lambda * w.iter().map(|c| c.abs()).sum::<f64>()
}

/// Smallest lambda for which every weight is zero.
pub fn lambda_max(x: &Matrix, y: &[f64]) -> f64 {
    let n = x.rows() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    (0..x.cols())
        .map(|j| {
            let xbar = (0..x.rows()).map(|i| x.get(i, j)).sum::<f64>() / n;
            ((0..x.rows())
                .map(|i| (x.get(i, j) - xbar) * (y[i] - ybar))
                .sum::<f64>()
                / n)
                .abs()
        })
        .fold(0.0, f64::max)
}

/// Coordinate descent until the largest coefficient change (intercept
/// included) drops below `tol`. Hitting `max_iter` is not an error; the
/// model reports `converged = false`.
pub fn fit_lasso(x: &Matrix, y: &[f64], lambda: f64, tol: f64, max_iter: usize) -> Result<LassoModel> {
    if !(lambda >= 0.0) {
        return Err(Error::arg("lambda must be non-negative"));
    }
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::data("cannot fit LASSO on zero rows"));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite value in LASSO input"));
    }
    let (n, d) = (x.rows(), x.cols());
    let nf = n as f64;
    let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j)).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();

    let mut w = vec![0.0; d];
    let mut b = y.iter().sum::<f64>() / nf;
    let mut resid: Vec<f64> = y.iter().map(|t| t - b).collect();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..d {
            if sq[j] == 0.0 {
                continue;
            }
            let col = &cols[j];
            let rho = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + sq[j] * w[j];
            let new = soft_threshold(rho, lambda) / sq[j];
            let delta = new - w[j];
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(col) {
                    *r -= delta * a;
                }
                w[j] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        let shift = resid.iter().sum::<f64>() / nf;
        if shift != 0.0 {
            b += shift;
            for r in resid.iter_mut() {
                *r -= shift;
            }
        }
        max_delta = max_delta.max(shift.abs());
        history.push(lasso_objective(x, y, &w, b, lambda));
        if max_delta < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("LASSO did not converge within {max_iter} sweeps (lambda = {lambda})");
    }
    Ok(LassoModel {
        weights: w,
        intercept: b,
        lambda,
        feature_names: (0..d).map(|j| format!("f{j}")).collect(),
        converged,
        iterations,
        objective_history: history,
    })
}

impl LassoModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                actual: x.cols(),
            });
        }
        Ok(x.iter_rows()
            .map(|r| self.intercept + r.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
            .collect())
    }

    /// Linear score clamped into [0, 1] so it can stand in as a probability.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.predict(x)?.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// Names of the features with a nonzero weight, in model order.
pub fn lasso_selected(m: &LassoModel) -> Vec<String> {
    m.weights
        .iter()
        .zip(&m.feature_names)
        .filter(|(w, _)| **w != 0.0)
        .map(|(_, n)| n.clone())
        .collect()
}

/// Features ranked by |weight| descending, zeros dropped, ties by index.
pub fn lasso_ranking(m: &LassoModel) -> Vec<(String, f64)> {
    let mut r: Vec<(usize, f64)> = m
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(j, w)| (j, w.abs()))
        .collect();
    r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    r.into_iter().map(|(j, w)| (m.feature_names[j].clone(), w)).collect()
}
