use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::auroc;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the best validation AUROC (earliest on ties).
    pub model: MlpModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// History as `epoch,train_loss,val_auroc` CSV text.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_auroc\n");
    for r in history {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_auroc));
    }
    s
}

/// Mini-batch momentum SGD with per-epoch shuffling. After each epoch the
/// validation AUROC is measured in inference mode and the best snapshot kept.
pub fn train_matrices(
    mut model: MlpModel,
    x: &Matrix,
    y: &[u8],
    val_x: &Matrix,
    val_y: &[u8],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::arg("epochs must be at least 1"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::arg("batch_size must be at least 1"));
    }
    if x.rows() == 0 {
        return Err(Error::data("empty training set"));
    }
    if x.rows() != y.len() || val_x.rows() != val_y.len() {
        return Err(Error::Dimension {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    let needs_pairs = model.architecture.has_batch_norm();
    let mut shuffle_rng = seed::derived_rng(cfg.seed, "mlp_shuffle", 0);
    let mut dropout_rng = seed::derived_rng(cfg.seed, "mlp_dropout", 0);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut warned = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 && needs_pairs {
                if !warned {
                    warn!("skipping a training batch of size 1 (batch norm needs two rows)");
                    warned = true;
                }
                continue;
            }
            let bx = x.select_rows(chunk);
            let by: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
            let loss = model.backward_and_step(&bx, &by, cfg.learning_rate, cfg.momentum, &mut dropout_rng)?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_auroc = auroc(&model.predict(val_x)?, val_y)?;
        let train_loss = if seen > 0 { loss_sum / seen as f64 } else { f64::NAN };
        if !train_loss.is_finite() {
            return Err(Error::numeric(format!("training loss became non-finite at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_auroc,
        });
        if best.as_ref().is_none_or(|(a, _, _)| val_auroc > *a) {
            best = Some((val_auroc, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}

/// [`train_matrices`] on the model-input columns of two datasets.
pub fn train(model: MlpModel, train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train_ds.has_missing() || val_ds.has_missing() {
        return Err(Error::data("training data must not contain missing values"));
    }
    let mut out = train_matrices(
        model,
        &train_ds.feature_matrix(),
        train_ds.require_labels("training")?,
        &val_ds.feature_matrix(),
        val_ds.require_labels("validation")?,
        cfg,
    )?;
    out.model.feature_names = train_ds.feature_names();
    Ok(out)
}
