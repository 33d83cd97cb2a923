//! Greedy backward feature elimination driven by validation AUROC.
//!
//! Starting from the full feature list, each sweep tries dropping every
//! surviving feature in input order. A removal is kept immediately when the
//! retrained model's validation AUROC beats the best so far by more than the
//! margin, so later candidates in the same sweep are evaluated against the
//! shrunken set. Sweeps repeat until one accepts nothing. Removing the last
//! feature is never attempted.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::auroc;
use crate::seed::derive_seed;

/// Trains a fresh model and scores the validation rows.
pub trait ModelFactory: Sync {
    fn fit_score(&self, train_x: &Matrix, train_y: &[u8], val_x: &Matrix, seed: u64) -> Result<Vec<f64>>;
}

impl<F> ModelFactory for F
where
    F: Fn(&Matrix, &[u8], &Matrix, u64) -> Result<Vec<f64>> + Sync,
{
    fn fit_score(&self, train_x: &Matrix, train_y: &[u8], val_x: &Matrix, seed: u64) -> Result<Vec<f64>> {
        self(train_x, train_y, val_x, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub seed: u64,
    /// Minimum AUROC improvement for a removal to count.
    pub margin: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { seed: 0, margin: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub removed: String,
    pub auroc: f64,
    pub accepted: bool,
    pub best_before: f64,
    pub best_after: f64,
    /// Feature set after this step.
    pub surviving: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub evaluations: Vec<CandidateEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTrace {
    pub initial_features: Vec<String>,
    pub baseline_auroc: f64,
    pub sweeps: Vec<SweepRecord>,
    pub final_features: Vec<String>,
    pub final_auroc: f64,
    pub n_retrains: usize,
}

impl AblationTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &CandidateEvaluation> {
        self.sweeps.iter().flat_map(|s| s.evaluations.iter()).filter(|e| e.accepted)
    }

    /// Best AUROC after the baseline and after each accepted removal.
    pub fn best_auroc_path(&self) -> Vec<f64> {
        std::iter::once(self.baseline_auroc)
            .chain(self.accepted().map(|e| e.best_after))
            .collect()
    }
}

/// Seed for evaluating `removed` (or the baseline) during sweep `sweep`.
pub fn candidate_seed(master: u64, sweep: usize, removed: Option<&str>) -> u64 {
    match removed {
        None => derive_seed(master, "ablation/baseline", 0),
        Some(f) => derive_seed(master, &format!("ablation/{f}"), sweep as u64),
    }
}

pub fn ablate<F: ModelFactory + ?Sized>(
    factory: &F,
    train: &Dataset,
    val: &Dataset,
    features: &[String],
    cfg: &AblationConfig,
) -> Result<(Vec<String>, AblationTrace)> {
    if features.is_empty() {
        return Err(Error::arg("ablation needs at least one feature"));
    }
    let train_y = train.require_labels("ablation")?;
    let val_y = val.require_labels("ablation")?;
    let evaluate = |set: &[String], seed: u64| -> Result<f64> {
        let run = || {
            let tx = train.select_columns(set)?.values().clone();
            let vx = val.select_columns(set)?.values().clone();
            let scores = factory.fit_score(&tx, train_y, &vx, seed)?;
            auroc(&scores, val_y)
        };
        run().map_err(|e| e.context(format!("evaluating feature subset [{}]", set.join(", "))))
    };

    let mut current: Vec<String> = features.to_vec();
    let baseline = evaluate(&current, candidate_seed(cfg.seed, 0, None))?;
    let mut best = baseline;
    let mut n_retrains = 1;
    let mut sweeps = Vec::new();
    let mut improvement = true;
    while improvement {
        improvement = false;
        let sweep = sweeps.len();
        let mut evaluations = Vec::new();
        for name in current.clone() {
            if current.len() == 1 {
                break;
            }
            let temp: Vec<String> = current.iter().filter(|f| **f != name).cloned().collect();
            let score = evaluate(&temp, candidate_seed(cfg.seed, sweep, Some(&name)))?;
            n_retrains += 1;
            let accepted = score > best + cfg.margin;
            let before = best;
            if accepted {
                best = score;
                current = temp;
                improvement = true;
            }
            evaluations.push(CandidateEvaluation {
                removed: name,
                auroc: score,
                accepted,
                best_before: before,
                best_after: best,
                surviving: current.clone(),
            });
        }
        sweeps.push(SweepRecord { sweep, evaluations });
    }
    let trace = AblationTrace {
        initial_features: features.to_vec(),
        baseline_auroc: baseline,
        sweeps,
        final_features: current.clone(),
        final_auroc: best,
        n_retrains,
    };
    Ok((current, trace))
}
