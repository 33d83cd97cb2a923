use std::path::{Path, PathBuf};

use mortality_core::baselines::{GbtParams, LogisticParams, RfParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub input: InputConfig,
    pub preprocess: PreprocessConfig,
    pub selection: SelectionConfig,
    pub smote: SmoteSettings,
    pub model: ModelConfig,
    pub ablation: AblationSettings,
    pub evaluation: EvaluationConfig,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("run"),
            input: InputConfig::default(),
            preprocess: PreprocessConfig::default(),
            selection: SelectionConfig::default(),
            smote: SmoteSettings::default(),
            model: ModelConfig::default(),
            ablation: AblationSettings::default(),
            evaluation: EvaluationConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    pub synth_preset: Option<String>,
    /// Row count override for the synthetic preset.
    pub synth_rows: Option<usize>,
    pub label_column: String,
    /// Per-row day index used for per-day reports; empty string disables.
    pub group_column: Option<String>,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            path: None,
            synth_preset: None,
            synth_rows: None,
            label_column: "mortality".into(),
            group_column: Some("day".into()),
        }
    }
}

impl InputConfig {
    pub fn group(&self) -> Option<&str> {
        self.group_column.as_deref().filter(|g| !g.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub nan_threshold: f64,
    pub ratios: [f64; 3],
    pub stratified: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            nan_threshold: 0.5,
            ratios: [0.70, 0.15, 0.15],
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Selector {
    Gbt,
    Lasso,
    KeepList,
}

impl Selector {
    pub fn as_str(self) -> &'static str {
        match self {
            Selector::Gbt => "gbt",
            Selector::Lasso => "lasso",
            Selector::KeepList => "keep-list",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub method: Selector,
    pub top_k: usize,
    /// One feature name per line; merged into (or, for `keep-list`, replacing) the ranking.
    pub keep_list: Option<PathBuf>,
    /// Fixed LASSO penalty; by default the path is walked until `top_k` features are active.
    pub lasso_lambda: Option<f64>,
    pub gbt: GbtParams,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            method: Selector::Gbt,
            top_k: 30,
            keep_list: None,
            lasso_lambda: None,
            gbt: GbtParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteSettings {
    pub enabled: bool,
    pub k_neighbors: usize,
    pub target_ratio: f64,
    /// Add an `is_synthetic` column to the resampled CSV.
    pub tag_synthetic: bool,
}

impl Default for SmoteSettings {
    fn default() -> Self {
        SmoteSettings {
            enabled: true,
            k_neighbors: 5,
            target_ratio: 1.0,
            tag_synthetic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dl,
    Lr,
    Rf,
    Gbt,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dl => "dl",
            ModelKind::Lr => "lr",
            ModelKind::Rf => "rf",
            ModelKind::Gbt => "gbt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub input_batch_norm: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![100, 50, 25],
            dropout: 0.2,
            input_batch_norm: true,
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub mlp: MlpConfig,
    pub logistic: LogisticParams,
    pub gbt: GbtParams,
    pub rf: RfParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Dl,
            mlp: MlpConfig::default(),
            logistic: LogisticParams::default(),
            gbt: GbtParams::default(),
            rf: RfParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub enabled: bool,
    pub margin: f64,
    /// Epoch budget for each network retrain during ablation; defaults to the model's.
    pub epochs: Option<usize>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            enabled: true,
            margin: 0.0,
            epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub bootstrap: usize,
    pub level: f64,
    pub threshold: f64,
    pub per_day: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            bootstrap: 1000,
            level: 0.95,
            threshold: 0.5,
            per_day: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub enabled: bool,
    pub rows: usize,
    pub top_k: usize,
    pub background_rows: usize,
    pub n_coalitions: Option<usize>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            enabled: true,
            rows: 100,
            top_k: 15,
            background_rows: 50,
            n_coalitions: None,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> CliResult<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| CliError::config(format!("JSON config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| CliError::config(format!("TOML config: {e}")))
        }
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = cfg.input.path.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.selection.keep_list.as_mut() {
            resolve(base, p);
        }
        resolve(base, &mut cfg.out_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serialises");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> CliResult<()> {
        let mut p = Vec::new();
        let i = &self.input;
        match (&i.path, &i.synth_preset) {
            (Some(_), Some(_)) => p.push("input: give either `path` or `synth_preset`, not both".to_string()),
            (None, None) => p.push("input: one of `path` or `synth_preset` is required".to_string()),
            (Some(path), None) if !path.is_file() => p.push(format!("input: file {} does not exist", path.display())),
            (None, Some(name)) => {
                if let Err(e) = mortality_core::synth::CohortSpec::preset(name, 0) {
                    p.push(format!("input: {e}"));
                }
            }
            _ => {}
        }
        if i.synth_rows == Some(0) {
            p.push("input: synth_rows must be positive".into());
        }
        if i.label_column.is_empty() {
            p.push("input: label_column must not be empty".into());
        }
        let pp = &self.preprocess;
        if !(0.0..=1.0).contains(&pp.nan_threshold) {
            p.push(format!("preprocess: nan_threshold {} outside [0, 1]", pp.nan_threshold));
        }
        if pp.ratios.iter().any(|r| !(*r > 0.0)) || (pp.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            p.push(format!("preprocess: ratios {:?} must be positive and sum to 1", pp.ratios));
        }
        let s = &self.selection;
        if s.top_k == 0 {
            p.push("selection: top_k must be at least 1".into());
        }
        match &s.keep_list {
            Some(k) if !k.is_file() => p.push(format!("selection: keep_list {} does not exist", k.display())),
            None if s.method == Selector::KeepList => p.push("selection: method keep-list needs `keep_list`".into()),
            _ => {}
        }
        if s.lasso_lambda.is_some_and(|l| !(l >= 0.0)) {
            p.push("selection: lasso_lambda must be non-negative".into());
        }
        check_gbt(&mut p, "selection.gbt", &s.gbt);
        let sm = &self.smote;
        if sm.k_neighbors == 0 {
            p.push("smote: k_neighbors must be at least 1".into());
        }
        if !(sm.target_ratio > 0.0 && sm.target_ratio <= 1.0) {
            p.push(format!("smote: target_ratio {} outside (0, 1]", sm.target_ratio));
        }
        let m = &self.model.mlp;
        if m.hidden.is_empty() || m.hidden.contains(&0) {
            p.push("model.mlp: hidden widths must be a non-empty list of positive sizes".into());
        }
        if !(0.0..1.0).contains(&m.dropout) {
            p.push(format!("model.mlp: dropout {} outside [0, 1)", m.dropout));
        }
        if m.epochs == 0 || m.batch_size == 0 {
            p.push("model.mlp: epochs and batch_size must be at least 1".into());
        }
        if !(m.learning_rate > 0.0) || !(0.0..1.0).contains(&m.momentum) {
            p.push("model.mlp: learning_rate must be positive and momentum in [0, 1)".into());
        }
        let lr = &self.model.logistic;
        if !(lr.learning_rate > 0.0) || lr.epochs == 0 || !(lr.l2 >= 0.0) {
            p.push("model.logistic: learning_rate > 0, epochs >= 1 and l2 >= 0 required".into());
        }
        check_gbt(&mut p, "model.gbt", &self.model.gbt);
        let rf = &self.model.rf;
        if rf.n_trees == 0 || rf.max_features == Some(0) || rf.min_samples_split < 2 {
            p.push("model.rf: n_trees >= 1, max_features >= 1 and min_samples_split >= 2 required".into());
        }
        let a = &self.ablation;
        if !(a.margin >= 0.0) {
            p.push("ablation: margin must be non-negative".into());
        }
        if a.epochs == Some(0) {
            p.push("ablation: epochs must be at least 1".into());
        }
        let e = &self.evaluation;
        if e.bootstrap == 0 {
            p.push("evaluation: bootstrap must be at least 1".into());
        }
        if !(e.level > 0.0 && e.level < 1.0) {
            p.push(format!("evaluation: level {} outside (0, 1)", e.level));
        }
        if !(e.threshold > 0.0 && e.threshold < 1.0) {
            p.push(format!("evaluation: threshold {} outside (0, 1)", e.threshold));
        }
        let x = &self.explain;
        if x.rows == 0 || x.top_k == 0 || x.background_rows == 0 {
            p.push("explain: rows, top_k and background_rows must be at least 1".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(p))
        }
    }
}

fn check_gbt(p: &mut Vec<String>, section: &str, g: &GbtParams) {
    if g.n_trees == 0 || g.max_depth == 0 {
        p.push(format!("{section}: n_trees and max_depth must be at least 1"));
    }
    if !(g.learning_rate > 0.0 && g.learning_rate <= 1.0) {
        p.push(format!("{section}: learning_rate {} outside (0, 1]", g.learning_rate));
    }
    if !(g.reg_lambda >= 0.0 && g.gamma >= 0.0 && g.min_child_weight >= 0.0) {
        p.push(format!("{section}: reg_lambda, gamma and min_child_weight must be non-negative"));
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
