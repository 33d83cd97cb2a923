#![allow(dead_code)]

use std::path::Path;

use mortality_cli::config::{ModelKind, RunConfig};

/// A synthetic run small enough to finish in seconds.
pub fn small_config(out: &Path, model: ModelKind) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = 11;
    c.out_dir = out.to_path_buf();
    c.input.synth_preset = Some("paper-shape".into());
    c.input.synth_rows = Some(600);
    c.selection.top_k = 10;
    c.selection.gbt.n_trees = 20;
    c.model.kind = model;
    c.model.mlp.epochs = 3;
    c.model.rf.n_trees = 20;
    c.model.gbt.n_trees = 20;
    c.model.logistic.epochs = 200;
    c.ablation.enabled = false;
    c.evaluation.bootstrap = 50;
    c.explain.rows = 4;
    c.explain.background_rows = 10;
    c.explain.n_coalitions = Some(40);
    c
}
