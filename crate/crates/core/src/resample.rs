//! SMOTE oversampling of the minority class.
//!
//! Synthetic rows are `x + u * (x_nn - x)` with `u ~ U[0, 1)`, `x` a random
//! real minority row and `x_nn` one of its `k` nearest minority neighbours
//! (Euclidean, model features only, ties broken by lower row index).
//! All draws come from one sequential seeded stream; only the neighbour
//! search runs in parallel.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Desired minority:majority ratio after resampling.
    pub target_ratio: f64,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig {
            k_neighbors: 5,
            target_ratio: 1.0,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoteOutput {
    /// Original rows first, synthetic rows appended after them.
    pub dataset: Dataset,
    pub n_original: usize,
    pub n_synthetic: usize,
    pub minority_class: u8,
}

impl SmoteOutput {
    /// One flag per row, true for synthetic rows.
    pub fn provenance(&self) -> Vec<bool> {
        (0..self.n_original + self.n_synthetic)
            .map(|i| i >= self.n_original)
            .collect()
    }
}

/// Indices (into `points`) of the `k` nearest other rows of every row.
pub fn nearest_neighbors(points: &Matrix, k: usize, exec: Execution) -> Vec<Vec<usize>> {
    let m = points.rows();
    exec.map(m, |i| {
        let xi = points.row(i);
        let mut d: Vec<(f64, usize)> = (0..m)
            .filter(|&j| j != i)
            .map(|j| {
                let dist = xi
                    .iter()
                    .zip(points.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (dist, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
        d.into_iter().map(|(_, j)| j).collect()
    })
}

/// Number of synthetic rows needed to lift `minority` to `ratio * majority`.
pub fn synthetic_count(minority: usize, majority: usize, ratio: f64) -> usize {
    let target = (ratio * majority as f64 + 1e-9).floor() as usize;
    target.saturating_sub(minority)
}

pub fn smote(train: &Dataset, cfg: &SmoteConfig) -> Result<SmoteOutput> {
    if cfg.k_neighbors == 0 {
        return Err(Error::arg("k_neighbors must be at least 1"));
    }
    if !(cfg.target_ratio > 0.0) {
        return Err(Error::arg("target_ratio must be positive"));
    }
    if train.has_missing() {
        return Err(Error::data("SMOTE input must not contain missing values"));
    }
    let labels = train.require_labels("SMOTE")?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    let (minority_class, n_min, n_maj) = if n_pos <= n_neg {
        (1u8, n_pos, n_neg)
    } else {
        (0u8, n_neg, n_pos)
    };
    let n_new = synthetic_count(n_min, n_maj, cfg.target_ratio);
    let passthrough = SmoteOutput {
        dataset: train.clone(),
        n_original: train.n_rows(),
        n_synthetic: 0,
        minority_class,
    };
    if n_new == 0 {
        return Ok(passthrough);
    }
    if n_min <= cfg.k_neighbors {
        return Err(Error::data(format!(
            "minority class has {n_min} rows; SMOTE with k = {} needs more",
            cfg.k_neighbors
        )));
    }

    let minority_rows: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == minority_class)
        .collect();
    let feat = train.feature_indices();
    let points = train.values().select_rows(&minority_rows).select_cols(&feat);
    let neighbors = nearest_neighbors(&points, cfg.k_neighbors, cfg.execution);

    let mut rng = seed::derived_rng(cfg.seed, "smote", 0);
    let mut values = Matrix::zeros(0, train.n_cols());
    let mut groups = Vec::with_capacity(n_new);
    for _ in 0..n_new {
        let base = rng.random_range(0..minority_rows.len());
        let nb = neighbors[base][rng.random_range(0..cfg.k_neighbors)];
        let lambda: f64 = rng.random();
        let x = train.values().row(minority_rows[base]);
        let x_nn = train.values().row(minority_rows[nb]);
        // identifiers are copied from the base row, features interpolated
        let mut row = x.to_vec();
        for &j in &feat {
            row[j] = x[j] + lambda * (x_nn[j] - x[j]);
        }
        values.push_row(&row)?;
        if let Some(g) = train.groups() {
            groups.push(g[minority_rows[base]]);
        }
    }
    let mut dataset = train.clone();
    let new_labels = vec![minority_class; n_new];
    dataset.append_rows(
        &values,
        Some(&new_labels),
        train.groups().map(|_| groups.as_slice()),
    )?;
    Ok(SmoteOutput {
        dataset,
        n_original: train.n_rows(),
        n_synthetic: n_new,
        minority_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(rows: &[Vec<f64>], labels: Vec<u8>) -> Dataset {
        let m = Matrix::from_rows(rows).unwrap();
        let names: Vec<String> = (0..m.cols()).map(|j| format!("f{j}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        Dataset::from_numeric(&names, m, Some(labels)).unwrap()
    }

    #[test]
    fn cohort_counts_balance_exactly() {
        assert_eq!(synthetic_count(505, 1935, 1.0), 1430);
        assert_eq!(505 + synthetic_count(505, 1935, 1.0), 1935);
        assert_eq!(synthetic_count(505, 1935, 0.25), 0);
    }

    #[test]
    fn identical_minority_points_reproduce_themselves() {
        let rows = vec![
            vec![0.3, -0.7],
            vec![0.3, -0.7],
            vec![5.0, 5.0],
            vec![6.0, 5.0],
            vec![7.0, 5.0],
            vec![8.0, 5.0],
        ];
        let ds = labelled(&rows, vec![1, 1, 0, 0, 0, 0]);
        let cfg = SmoteConfig {
            k_neighbors: 1,
            seed: 4,
            ..Default::default()
        };
        let out = smote(&ds, &cfg).unwrap();
        assert_eq!(out.n_synthetic, 2);
        for i in out.n_original..out.dataset.n_rows() {
            assert_eq!(out.dataset.values().row(i), &[0.3, -0.7]);
            assert_eq!(out.dataset.labels().unwrap()[i], 1);
        }
    }

    #[test]
    fn already_balanced_is_a_no_op() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let ds = labelled(&rows, vec![0, 1, 0, 1, 0, 1, 0, 1]);
        let out = smote(&ds, &SmoteConfig::default()).unwrap();
        assert_eq!(out.n_synthetic, 0);
        assert_eq!(out.dataset, ds);
    }

    #[test]
    fn errors() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let ds = labelled(&rows, vec![0, 0, 0, 0, 0, 1, 1, 1]);
        assert!(smote(&ds, &SmoteConfig::default()).is_err());
        let unlabelled =
            Dataset::from_numeric(&["a"], Matrix::from_rows(&rows).unwrap(), None).unwrap();
        assert!(smote(&unlabelled, &SmoteConfig::default()).is_err());
    }

    #[test]
    fn neighbour_ties_prefer_lower_index() {
        let pts = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![-1.0], vec![1.0]]).unwrap();
        let nn = nearest_neighbors(&pts, 2, Execution::Sequential);
        assert_eq!(nn[0], vec![1, 2]);
        assert_eq!(nn[1], vec![3, 0]);
    }
}
