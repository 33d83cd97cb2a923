//! The end-to-end pipeline with its artifact manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use mortality_core::metrics::MetricsReport;
use mortality_core::model::AnyModel;
use mortality_core::neural::history_csv;
use mortality_core::synth::LABEL_NAME;
use mortality_core::{Dataset, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::error::{CliError, CliResult};
use crate::stages::{self, stage_seed, EvaluationReport, ResampleReport, Selection, Splits};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STAGES: [&str; 7] = ["preprocess", "select", "resample", "train", "ablate", "evaluate", "explain"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub seed: Option<u64>,
    pub artifacts: Vec<Artifact>,
    /// Outputs were reused from an earlier run with the same config.
    pub resumed: bool,
    pub wall_clock_secs: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub master_seed: u64,
    pub selector: String,
    pub model: String,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    pub completed: bool,
    pub final_metrics: Option<MetricsReport>,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: not a run manifest: {e}", path.display())))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Directory holding the run's artifacts.
    pub fn run_dir(&self) -> &Path {
        &self.config.out_dir
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| mortality_core::Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| mortality_core::Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub resume: bool,
}

struct Runner {
    dir: PathBuf,
    previous: Option<RunManifest>,
    /// Set once any stage recomputes; later stages then recompute too.
    recomputed: bool,
    manifest: RunManifest,
}

type StageOutput<T> = (T, Vec<&'static str>);

impl Runner {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn reusable(&self, name: &str) -> bool {
        if self.recomputed {
            return false;
        }
        let Some(prev) = self.previous.as_ref().and_then(|m| m.stage(name)) else {
            return false;
        };
        prev.status != StageStatus::Failed
            && prev
                .artifacts
                .iter()
                .all(|a| sha256_file(&self.dir.join(&a.path)).is_ok_and(|h| h == a.sha256))
    }

    fn save_manifest(&self) -> CliResult<()> {
        write_json(&self.path(MANIFEST_FILE), &self.manifest)?;
        Ok(())
    }

    fn record(&mut self, name: &str, status: StageStatus, seed: Option<u64>, files: &[&str], resumed: bool, start: Instant) -> CliResult<()> {
        let mut artifacts = Vec::with_capacity(files.len());
        for f in files {
            artifacts.push(Artifact {
                path: (*f).to_string(),
                sha256: sha256_file(&self.path(f))?,
            });
        }
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            status,
            seed,
            artifacts,
            resumed,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            error: None,
        });
        self.save_manifest()
    }

    /// Runs or resumes one stage. `load` rebuilds the stage's in-memory output
    /// from its artifacts; `compute` produces it and writes the artifacts.
    fn stage<T>(
        &mut self,
        name: &str,
        seed: Option<u64>,
        load: impl FnOnce(&Self) -> Result<T>,
        compute: impl FnOnce(&Self) -> Result<StageOutput<T>>,
    ) -> CliResult<T> {
        let start = Instant::now();
        if self.reusable(name) {
            if let Ok(value) = load(self) {
                let prev = self.previous.as_ref().and_then(|m| m.stage(name)).cloned().expect("checked");
                info!("stage {name}: reusing previous outputs");
                let files: Vec<&str> = prev.artifacts.iter().map(|a| a.path.as_str()).collect();
                self.record(name, prev.status, seed, &files, true, start)?;
                return Ok(value);
            }
        }
        self.recomputed = true;
        info!("stage {name}: running");
        match compute(self) {
            Ok((value, files)) => {
                let status = if files.is_empty() { StageStatus::Skipped } else { StageStatus::Completed };
                self.record(name, status, seed, &files, false, start)?;
                Ok(value)
            }
            Err(source) => {
                self.manifest.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Failed,
                    seed,
                    artifacts: Vec::new(),
                    resumed: false,
                    wall_clock_secs: start.elapsed().as_secs_f64(),
                    error: Some(source.to_string()),
                });
                self.save_manifest()?;
                Err(CliError::Stage {
                    stage: name.into(),
                    source,
                })
            }
        }
    }
}

/// Label and day column names of the datasets written by the pipeline.
fn written_columns(cfg: &RunConfig) -> (String, Option<String>) {
    if cfg.input.synth_preset.is_some() {
        (LABEL_NAME.into(), Some(mortality_core::synth::GROUP_NAME.into()))
    } else {
        (cfg.input.label_column.clone(), cfg.input.group().map(String::from))
    }
}

/// Validates the config, then runs every stage in order.
pub fn run(cfg: &RunConfig, opts: RunOptions) -> CliResult<RunManifest> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let config_hash = cfg.hash();
    let previous = if opts.resume {
        RunManifest::load(&dir.join(MANIFEST_FILE)).ok().filter(|m| m.config_hash == config_hash)
    } else {
        None
    };
    let mut versions = BTreeMap::new();
    versions.insert("mortality-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert("mortality-core".to_string(), mortality_core::VERSION.to_string());
    let mut r = Runner {
        dir,
        previous,
        recomputed: false,
        manifest: RunManifest {
            config_hash,
            versions,
            master_seed: cfg.seed,
            selector: cfg.selection.method.as_str().into(),
            model: cfg.model.kind.as_str().into(),
            config: cfg.clone(),
            stages: Vec::new(),
            completed: false,
            final_metrics: None,
        },
    };
    let (label, group) = written_columns(cfg);
    let load_split = |r: &Runner, f: &str| stages::load_written(&r.path(f), &label, group.as_deref());

    let split_seed = stage_seed(cfg.seed, "split");
    let splits: Splits = r.stage(
        "preprocess",
        Some(split_seed),
        |r| {
            Ok(Splits {
                train: load_split(r, "train.csv")?,
                val: load_split(r, "val.csv")?,
                test: load_split(r, "test.csv")?,
            })
        },
        |r| {
            let mut files = Vec::new();
            let raw = match (&cfg.input.path, &cfg.input.synth_preset) {
                (Some(p), _) => stages::load_dataset(p, &cfg.input)?,
                (None, Some(preset)) => {
                    let (ds, truth) = stages::synth_cohort(preset, cfg.input.synth_rows, stage_seed(cfg.seed, "synth"))?;
                    stages::write_dataset(&ds, &r.path("cohort.csv"), None)?;
                    write_json(&r.path("ground_truth.json"), &truth)?;
                    files.extend(["cohort.csv", "ground_truth.json"]);
                    ds
                }
                (None, None) => unreachable!("validated"),
            };
            let (splits, pre, report) = stages::preprocess(&raw, &cfg.preprocess, split_seed)?;
            stages::write_dataset(&splits.train, &r.path("train.csv"), None)?;
            stages::write_dataset(&splits.val, &r.path("val.csv"), None)?;
            stages::write_dataset(&splits.test, &r.path("test.csv"), None)?;
            write_json(&r.path("preprocessor.json"), &pre)?;
            write_json(&r.path("preprocess_report.json"), &report)?;
            files.extend(["train.csv", "val.csv", "test.csv", "preprocessor.json", "preprocess_report.json"]);
            Ok((splits, files))
        },
    )?;

    let selection: Selection = r.stage(
        "select",
        None,
        |r| read_json(&r.path("selected_features.json")),
        |r| {
            let s = stages::select_features(&splits.train, &cfg.selection)?;
            write_json(&r.path("selected_features.json"), &s)?;
            Ok((s, vec!["selected_features.json"]))
        },
    )?;
    let features = selection.selected.clone();
    let val = stages::restrict(&splits.val, &features)?;

    let smote_seed = stage_seed(cfg.seed, "smote");
    let resampled: Dataset = r.stage(
        "resample",
        Some(smote_seed),
        |r| load_split(r, "train_resampled.csv"),
        |r| {
            let out = stages::resample(&stages::restrict(&splits.train, &features)?, &cfg.smote, smote_seed)?;
            let flags = out.provenance();
            let tag = cfg.smote.tag_synthetic.then_some(flags.as_slice());
            stages::write_dataset(&out.dataset, &r.path("train_resampled.csv"), tag)?;
            write_json(
                &r.path("resample_report.json"),
                &ResampleReport {
                    n_original: out.n_original,
                    n_synthetic: out.n_synthetic,
                    minority_class: out.minority_class,
                    seed: smote_seed,
                },
            )?;
            Ok((out.dataset, vec!["train_resampled.csv", "resample_report.json"]))
        },
    )?;

    let train_seed = stage_seed(cfg.seed, "train");
    let model: AnyModel = r.stage(
        "train",
        Some(train_seed),
        |r| AnyModel::load(r.path("model.json")),
        |r| {
            let (m, report, history) = stages::train_model(cfg.model.kind, &cfg.model, &resampled, &val, train_seed)?;
            m.save(r.path("model.json"))?;
            write_json(&r.path("train_report.json"), &report)?;
            let mut files = vec!["model.json", "train_report.json"];
            if let Some(h) = history {
                write_text(&r.path("history.csv"), &history_csv(&h))?;
                files.push("history.csv");
            }
            Ok((m, files))
        },
    )?;

    let ablation_seed = stage_seed(cfg.seed, "ablation");
    let final_model: AnyModel = r.stage(
        "ablate",
        Some(ablation_seed),
        |r| {
            if cfg.ablation.enabled {
                AnyModel::load(r.path("final_model.json"))
            } else {
                Ok(model.clone())
            }
        },
        |r| {
            if !cfg.ablation.enabled {
                return Ok((model.clone(), Vec::new()));
            }
            let (kept, trace) = stages::run_ablation(
                cfg.model.kind,
                &cfg.model,
                &resampled,
                &val,
                &features,
                cfg.ablation.margin,
                cfg.ablation.epochs,
                ablation_seed,
            )?;
            write_json(&r.path("ablation_trace.json"), &trace)?;
            let final_model = if kept == features {
                model.clone()
            } else {
                let (m, _, _) = stages::train_model(
                    cfg.model.kind,
                    &cfg.model,
                    &resampled.select_columns(&kept)?,
                    &val,
                    train_seed,
                )?;
                m
            };
            final_model.save(r.path("final_model.json"))?;
            Ok((final_model, vec!["ablation_trace.json", "final_model.json"]))
        },
    )?;

    let eval_seed = stage_seed(cfg.seed, "bootstrap");
    let run_label = format!("{}-{}", cfg.selection.method.as_str(), cfg.model.kind.as_str());
    let report: EvaluationReport = r.stage(
        "evaluate",
        Some(eval_seed),
        |r| read_json(&r.path("metrics.json")),
        |r| {
            let (report, scores) = stages::evaluate_model(&final_model, &splits.test, &cfg.evaluation, eval_seed)?;
            write_json(&r.path("metrics.json"), &report)?;
            write_text(&r.path("metrics.csv"), &stages::metrics_csv(&run_label, &report))?;
            write_text(&r.path("test_scores.csv"), &stages::scores_csv(&splits.test, &scores))?;
            Ok((report, vec!["metrics.json", "metrics.csv", "test_scores.csv"]))
        },
    )?;

    let shap_seed = stage_seed(cfg.seed, "shap");
    r.stage(
        "explain",
        Some(shap_seed),
        |_| Ok(()),
        |r| {
            if !cfg.explain.enabled {
                return Ok(((), Vec::new()));
            }
            let summary = stages::explain_model(&final_model, &splits.train, &splits.test, &cfg.explain, shap_seed)?;
            write_json(&r.path("shap_summary.json"), &summary)?;
            write_text(&r.path("shap_values.csv"), &summary.to_csv())?;
            Ok(((), vec!["shap_summary.json", "shap_values.csv"]))
        },
    )?;

    r.manifest.final_metrics = Some(report.overall);
    r.manifest.completed = true;
    r.save_manifest()?;
    Ok(r.manifest)
}

/// Paths of every JSON report a run writes, for determinism checks.
pub fn report_paths(m: &RunManifest) -> Vec<PathBuf> {
    m.stages
        .iter()
        .flat_map(|s| s.artifacts.iter())
        .filter(|a| a.path.ends_with(".json"))
        .map(|a| m.run_dir().join(&a.path))
        .collect()
}
