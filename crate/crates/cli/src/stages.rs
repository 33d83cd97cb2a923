//! Individual pipeline steps, shared by `run` and the single-step subcommands.

use std::collections::BTreeSet;
use std::path::Path;

use log::{info, warn};
use mortality_core::ablation::{ablate, AblationConfig, AblationTrace};
use mortality_core::baselines::{
    fit_gbt, fit_lasso, fit_logistic, fit_random_forest, gbt_importance, lasso::lambda_max, lasso::lasso_ranking,
    NamedFeatures,
};
use mortality_core::data::{load_csv, save_csv, CsvWriteOptions};
use mortality_core::explain::{sample_background, shap_summary, ShapConfig, ShapSummary};
use mortality_core::metrics::{evaluate, grouped_eval, BootstrapConfig, EvalConfig, MetricsReport};
use mortality_core::model::AnyModel;
use mortality_core::neural::{train_matrices, Architecture, EpochRecord, MlpModel, TrainConfig};
use mortality_core::preprocess::{drop_high_nan_columns, split, Preprocessor, SplitSpec};
use mortality_core::resample::{smote, SmoteConfig, SmoteOutput};
use mortality_core::seed::derive_seed;
use mortality_core::synth::{generate, CohortSpec, GroundTruth};
use mortality_core::{Dataset, Error, Matrix, Result};
use serde::{Deserialize, Serialize};

use crate::config::{
    EvaluationConfig, ExplainConfig, InputConfig, ModelConfig, ModelKind, PreprocessConfig, SelectionConfig, Selector,
    SmoteSettings,
};

pub const PROVENANCE_COLUMN: &str = "is_synthetic";

/// Seed for a named stage of a run.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    derive_seed(master, &format!("stage/{stage}"), 0)
}

pub fn load_dataset(path: &Path, input: &InputConfig) -> Result<Dataset> {
    load_csv(path, &input.label_column, input.group())
}

/// Reads a CSV written by this tool, dropping a provenance column if present.
pub fn load_written(path: &Path, label: &str, group: Option<&str>) -> Result<Dataset> {
    let ds = load_csv(path, label, group)?;
    if ds.column_index(PROVENANCE_COLUMN).is_some() {
        let keep: Vec<String> = ds.column_names().into_iter().filter(|c| c != PROVENANCE_COLUMN).collect();
        return ds.select_columns(&keep);
    }
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, path: &Path, provenance: Option<&[bool]>) -> Result<()> {
    let opts = CsvWriteOptions {
        provenance: provenance.map(|p| (PROVENANCE_COLUMN, p)),
        ..Default::default()
    };
    save_csv(ds, path, &opts)
}

pub fn synth_cohort(preset: &str, rows: Option<usize>, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let mut spec = CohortSpec::preset(preset, seed)?;
    if let Some(n) = rows {
        spec.n_rows = n;
    }
    generate(&spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub n_rows: usize,
    pub nan_threshold: f64,
    pub dropped_columns: Vec<String>,
    pub kept_columns: Vec<String>,
    pub constant_columns: Vec<String>,
    pub train_rows: usize,
    pub val_rows: usize,
    pub test_rows: usize,
    pub split_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Column filter, seeded split, then imputation and scaling fitted on the
/// training part only.
pub fn preprocess(ds: &Dataset, cfg: &PreprocessConfig, seed: u64) -> Result<(Splits, Preprocessor, PreprocessReport)> {
    let (kept, dropped) = drop_high_nan_columns(ds, cfg.nan_threshold)?;
    let spec = SplitSpec {
        ratios: (cfg.ratios[0], cfg.ratios[1], cfg.ratios[2]),
        seed,
        stratified: cfg.stratified,
    };
    let (train, val, test) = split(&kept, &spec)?;
    let pre = Preprocessor::fit(&train)?;
    let splits = Splits {
        train: pre.apply(&train)?,
        val: pre.apply(&val)?,
        test: pre.apply(&test)?,
    };
    let report = PreprocessReport {
        n_rows: ds.n_rows(),
        nan_threshold: cfg.nan_threshold,
        dropped_columns: dropped,
        kept_columns: kept.column_names(),
        constant_columns: pre.scaler.constant_columns().into_iter().map(String::from).collect(),
        train_rows: splits.train.n_rows(),
        val_rows: splits.val.n_rows(),
        test_rows: splits.test.n_rows(),
        split_seed: seed,
    };
    Ok((splits, pre, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: Selector,
    /// Screening scores (gain or |weight|), best first; empty for a keep-list.
    pub ranking: Vec<(String, f64)>,
    pub lasso_lambda: Option<f64>,
    pub selected: Vec<String>,
}

pub fn read_keep_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn lasso_screen(x: &Matrix, y: &[f64], names: &[String], top_k: usize, lambda: Option<f64>) -> Result<(Vec<(String, f64)>, f64)> {
    const TOL: f64 = 1e-7;
    const MAX_ITER: usize = 10_000;
    let fit = |l: f64| -> Result<Vec<(String, f64)>> {
        let mut m = fit_lasso(x, y, l, TOL, MAX_ITER)?;
        m.set_feature_names(names.to_vec());
        Ok(lasso_ranking(&m))
    };
    if let Some(l) = lambda {
        return Ok((fit(l)?, l));
    }
    // Walk down a geometric path until enough features are active.
    let top = lambda_max(x, y);
    let mut best = (Vec::new(), top);
    for k in 1..=120 {
        let l = top * 0.9f64.powi(k);
        let r = fit(l)?;
        let enough = r.len() >= top_k;
        best = (r, l);
        if enough {
            break;
        }
    }
    Ok(best)
}

pub fn select_features(train: &Dataset, cfg: &SelectionConfig) -> Result<Selection> {
    let names = train.feature_names();
    let x = train.feature_matrix();
    let y = train.require_labels("feature selection")?;
    let (ranking, lasso_lambda) = match cfg.method {
        Selector::Gbt => {
            let mut m = fit_gbt(&x, y, &cfg.gbt)?;
            m.set_feature_names(names.clone());
            (gbt_importance(&m), None)
        }
        Selector::Lasso => {
            let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
            let (r, l) = lasso_screen(&x, &yf, &names, cfg.top_k, cfg.lasso_lambda)?;
            (r, Some(l))
        }
        Selector::KeepList => (Vec::new(), None),
    };
    let mut selected: Vec<String> = ranking.iter().take(cfg.top_k).map(|(n, _)| n.clone()).collect();
    if cfg.method != Selector::KeepList && selected.len() < cfg.top_k {
        warn!(
            "{} screening ranked only {} features; fewer than the requested {}",
            cfg.method.as_str(),
            selected.len(),
            cfg.top_k
        );
    }
    if let Some(path) = &cfg.keep_list {
        let known: BTreeSet<&String> = names.iter().collect();
        for k in read_keep_list(path)? {
            if !known.contains(&k) {
                return Err(Error::data(format!("keep-list feature '{k}' is not a model input column")));
            }
            if !selected.contains(&k) {
                selected.push(k);
            }
        }
    }
    if selected.is_empty() {
        return Err(Error::data("feature selection produced an empty feature set"));
    }
    Ok(Selection {
        method: cfg.method,
        ranking,
        lasso_lambda,
        selected,
    })
}

/// Restricts a split to the selected features, keeping labels and groups.
pub fn restrict(ds: &Dataset, features: &[String]) -> Result<Dataset> {
    ds.select_columns(features)
}

pub fn resample(train: &Dataset, cfg: &SmoteSettings, seed: u64) -> Result<SmoteOutput> {
    if !cfg.enabled {
        return Ok(SmoteOutput {
            dataset: train.clone(),
            n_original: train.n_rows(),
            n_synthetic: 0,
            minority_class: 1,
        });
    }
    smote(
        train,
        &SmoteConfig {
            k_neighbors: cfg.k_neighbors,
            target_ratio: cfg.target_ratio,
            seed,
            ..Default::default()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub n_original: usize,
    pub n_synthetic: usize,
    pub minority_class: u8,
    pub seed: u64,
}

pub fn mlp_train_config(cfg: &ModelConfig, epochs: Option<usize>, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: epochs.unwrap_or(cfg.mlp.epochs),
        batch_size: cfg.mlp.batch_size,
        learning_rate: cfg.mlp.learning_rate,
        momentum: cfg.mlp.momentum,
        seed,
    }
}

pub fn architecture(cfg: &ModelConfig, d_in: usize) -> Architecture {
    Architecture {
        hidden: cfg.mlp.hidden.clone(),
        dropout_p: cfg.mlp.dropout,
        input_batch_norm: cfg.mlp.input_batch_norm,
        ..Architecture::standard(d_in)
    }
}

/// Fits one model on matrices. Networks also need the validation set for
/// best-epoch selection; the other kinds ignore it.
pub fn fit_on_matrices(
    kind: ModelKind,
    cfg: &ModelConfig,
    x: &Matrix,
    y: &[u8],
    val: (&Matrix, &[u8]),
    seed: u64,
    epochs: Option<usize>,
) -> Result<(AnyModel, Option<Vec<EpochRecord>>)> {
    Ok(match kind {
        ModelKind::Dl => {
            let model = MlpModel::new(architecture(cfg, x.cols()), seed)?;
            let out = train_matrices(model, x, y, val.0, val.1, &mlp_train_config(cfg, epochs, seed))?;
            (AnyModel::Mlp(out.model), Some(out.history))
        }
        ModelKind::Lr => (AnyModel::Logistic(fit_logistic(x, y, &cfg.logistic)?), None),
        ModelKind::Gbt => (AnyModel::Gbt(fit_gbt(x, y, &cfg.gbt)?), None),
        ModelKind::Rf => {
            let params = mortality_core::baselines::RfParams { seed, ..cfg.rf };
            (AnyModel::RandomForest(fit_random_forest(x, y, &params)?), None)
        }
    })
}

fn set_names(model: &mut AnyModel, names: Vec<String>) {
    match model {
        AnyModel::Logistic(m) => m.set_feature_names(names),
        AnyModel::Lasso(m) => m.set_feature_names(names),
        AnyModel::Gbt(m) => m.set_feature_names(names),
        AnyModel::RandomForest(m) => m.set_feature_names(names),
        AnyModel::Mlp(m) => m.feature_names = names,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelKind,
    pub features: Vec<String>,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub val_auroc: f64,
}

/// Trains on `train` using its columns as features (in order).
pub fn train_model(
    kind: ModelKind,
    cfg: &ModelConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
) -> Result<(AnyModel, TrainReport, Option<Vec<EpochRecord>>)> {
    let features = train.feature_names();
    let val = val.select_columns(&features)?;
    let x = train.feature_matrix();
    let vx = val.feature_matrix();
    let vy = val.require_labels("validation")?;
    let (mut model, history) = fit_on_matrices(kind, cfg, &x, train.require_labels("training")?, (&vx, vy), seed, None)?;
    set_names(&mut model, features.clone());
    let val_auroc = mortality_core::metrics::auroc(&model.predict_proba(&vx)?, vy)?;
    let best_epoch = history.as_ref().map(|h| {
        h.iter()
            .fold((0, f64::NEG_INFINITY), |b, r| if r.val_auroc > b.1 { (r.epoch, r.val_auroc) } else { b })
            .0
    });
    info!("trained {} on {} features (validation AUROC {val_auroc:.4})", kind.as_str(), features.len());
    Ok((
        model,
        TrainReport {
            model: kind,
            features,
            seed,
            best_epoch,
            val_auroc,
        },
        history,
    ))
}

/// Greedy ablation with the configured model kind as the retraining procedure.
pub fn run_ablation(
    kind: ModelKind,
    cfg: &ModelConfig,
    train: &Dataset,
    val: &Dataset,
    features: &[String],
    margin: f64,
    epochs: Option<usize>,
    seed: u64,
) -> Result<(Vec<String>, AblationTrace)> {
    let val_y = val.require_labels("validation")?.to_vec();
    let factory = |tx: &Matrix, ty: &[u8], vx: &Matrix, s: u64| -> Result<Vec<f64>> {
        let (m, _) = fit_on_matrices(kind, cfg, tx, ty, (vx, &val_y), s, epochs)?;
        m.predict_proba(vx)
    };
    ablate(&factory, train, val, features, &AblationConfig { seed, margin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub features: Vec<String>,
    pub overall: MetricsReport,
    /// One report per day, ascending; empty when per-day evaluation is off.
    pub per_day: Vec<MetricsReport>,
}

pub fn eval_config(cfg: &EvaluationConfig, seed: u64) -> EvalConfig {
    EvalConfig {
        threshold: cfg.threshold,
        bootstrap: BootstrapConfig {
            n_resamples: cfg.bootstrap,
            level: cfg.level,
            seed,
            ..Default::default()
        },
    }
}

pub fn model_matrix(model: &AnyModel, ds: &Dataset) -> Result<Matrix> {
    Ok(ds.select_columns(model.feature_names())?.values().clone())
}

pub fn evaluate_model(model: &AnyModel, data: &Dataset, cfg: &EvaluationConfig, seed: u64) -> Result<(EvaluationReport, Vec<f64>)> {
    let x = model_matrix(model, data)?;
    let scores = model.predict_proba(&x)?;
    let labels = data.require_labels("evaluation")?;
    let ec = eval_config(cfg, seed);
    let overall = evaluate(&scores, labels, &ec)?;
    let per_day = match (cfg.per_day, data.groups()) {
        (true, Some(g)) => grouped_eval(&scores, labels, g, &ec)?,
        (true, None) => {
            warn!("per-day evaluation requested but the data has no day column");
            Vec::new()
        }
        (false, _) => Vec::new(),
    };
    Ok((
        EvaluationReport {
            model: model.kind().to_string(),
            features: model.feature_names().to_vec(),
            overall,
            per_day,
        },
        scores,
    ))
}

/// `model,day,n,accuracy,...` rows; the pooled row has day `all`.
pub fn metrics_csv(label: &str, r: &EvaluationReport) -> String {
    let mut s = String::from("model,day,n,accuracy,precision,sensitivity,f1,specificity,auroc,ci_low,ci_high\n");
    let row = |day: String, m: &MetricsReport| {
        format!(
            "{label},{day},{},{},{},{},{},{},{},{},{}\n",
            m.n, m.accuracy, m.precision, m.sensitivity, m.f1, m.specificity, m.auroc, m.ci_low, m.ci_high
        )
    };
    s.push_str(&row("all".into(), &r.overall));
    for m in &r.per_day {
        s.push_str(&row(m.group.map_or("all".into(), |g| g.to_string()), m));
    }
    s
}

pub fn scores_csv(data: &Dataset, scores: &[f64]) -> String {
    let mut s = String::from("row,label,score\n");
    let labels = data.labels();
    for (i, p) in scores.iter().enumerate() {
        let y = labels.map_or(String::new(), |l| l[i].to_string());
        s.push_str(&format!("{i},{y},{p}\n"));
    }
    s
}

/// KernelSHAP summary over up to `rows` seeded rows of `data`, with a
/// background drawn from `background_source`.
pub fn explain_model(
    model: &AnyModel,
    background_source: &Dataset,
    data: &Dataset,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<ShapSummary> {
    let bg = sample_background(&model_matrix(model, background_source)?, cfg.background_rows, seed);
    let x = model_matrix(model, data)?;
    let sample = sample_background(&x, cfg.rows, derive_seed(seed, "explain_rows", 0));
    shap_summary(
        model,
        &sample,
        model.feature_names(),
        &bg,
        &ShapConfig {
            top_k: cfg.top_k,
            n_coalitions: cfg.n_coalitions,
            seed,
            ..Default::default()
        },
    )
}
