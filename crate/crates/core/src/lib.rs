//! Tabular mortality-risk modelling toolkit.
//!
//! The crate covers the whole modelling path for a binary outcome on a
//! numeric table: missing-value filtering and imputation, min-max scaling,
//! seeded splits, SMOTE rebalancing, boosted-tree and LASSO feature
//! screening, a batch-normalised MLP, greedy AUROC-driven feature ablation,
//! bootstrap-CI evaluation and Shapley-value attribution. A seeded synthetic
//! cohort generator with known ground truth backs the quantitative tests.
//!
//! Data-parallel inner loops (bootstrap resamples, forest trees, split
//! search, neighbour search, per-row explanations) run on rayon when the
//! `parallel` feature is enabled and fall back to plain iteration otherwise.
//! Both paths produce bit-identical results.

pub mod ablation;
pub mod baselines;
pub mod data;
pub mod error;
pub mod exec;
pub mod explain;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod preprocess;
pub mod resample;
pub mod seed;
pub mod synth;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{ColumnKind, ColumnMeta, Dataset};
pub use error::{Error, Result};
pub use exec::Execution;
pub use matrix::Matrix;

/// Anything that maps a feature matrix to one probability per row.
///
/// Implemented by every trained model and by plain closures, so the
/// explanation and ablation code can be driven by either.
pub trait Scorer: Sync {
    fn score(&self, x: &Matrix) -> Result<Vec<f64>>;
}

impl<F> Scorer for F
where
    F: Fn(&Matrix) -> Vec<f64> + Sync,
{
    fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self(x))
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
