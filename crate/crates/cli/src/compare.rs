//! Side-by-side metric tables over finished runs, and the selector x model grid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, RunConfig, Selector};
use crate::error::{CliError, CliResult};
use crate::run::{read_json, run, RunManifest, RunOptions};
use crate::stages::EvaluationReport;

pub const COLUMNS: [&str; 6] = ["accuracy", "precision", "sensitivity", "f1", "specificity", "auroc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub run_dir: PathBuf,
    /// In [`COLUMNS`] order.
    pub values: Vec<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<ComparisonRow>,
    /// Per column, the indices of the rows holding the best value.
    pub best: Vec<Vec<usize>>,
}

pub fn row_label(selector: &str, model: &str) -> String {
    let pretty = |s: &str| match s {
        "gbt" => "XGB".to_string(),
        "dl" => "DL".to_string(),
        other => other.to_uppercase(),
    };
    format!("{}-{}", pretty(selector), pretty(model))
}

fn evaluation_of(m: &RunManifest) -> CliResult<EvaluationReport> {
    let has_report = m
        .stage("evaluate")
        .is_some_and(|s| s.artifacts.iter().any(|a| a.path == "metrics.json"));
    if !has_report {
        return Err(CliError::Data(format!("run in {} has no evaluation report", m.run_dir().display())));
    }
    let path = m.run_dir().join("metrics.json");
    read_json(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn compare_manifests(manifests: &[RunManifest]) -> CliResult<ComparisonTable> {
    if manifests.len() < 2 {
        return Err(CliError::config("compare needs at least two runs"));
    }
    let mut rows = Vec::with_capacity(manifests.len());
    for m in manifests {
        let e = evaluation_of(m)?;
        let o = &e.overall;
        rows.push(ComparisonRow {
            label: row_label(&m.selector, &m.model),
            run_dir: m.run_dir().to_path_buf(),
            values: vec![o.accuracy, o.precision, o.sensitivity, o.f1, o.specificity, o.auroc],
            ci_low: o.ci_low,
            ci_high: o.ci_high,
        });
    }
    let best = (0..COLUMNS.len())
        .map(|c| {
            let top = rows.iter().map(|r| r.values[c]).fold(f64::NEG_INFINITY, f64::max);
            (0..rows.len()).filter(|&i| rows[i].values[c] == top).collect()
        })
        .collect();
    Ok(ComparisonTable {
        columns: COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
        best,
    })
}

/// Accepts manifest files or run directories.
pub fn compare_paths(paths: &[PathBuf]) -> CliResult<ComparisonTable> {
    let manifests = paths.iter().map(|p| RunManifest::load(p)).collect::<CliResult<Vec<_>>>()?;
    compare_manifests(&manifests)
}

impl ComparisonTable {
    fn is_best(&self, row: usize, col: usize) -> bool {
        self.best[col].contains(&row)
    }

    /// Fixed-width text table; `*` marks the best value in each column.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}", "model");
        for c in &self.columns {
            s.push_str(&format!(" {c:>12}"));
        }
        s.push_str(&format!(" {:>17}\n", "auroc 95% ci"));
        for (i, r) in self.rows.iter().enumerate() {
            s.push_str(&format!("{:<width$}", r.label));
            for (c, v) in r.values.iter().enumerate() {
                let mark = if self.is_best(i, c) { "*" } else { " " };
                s.push_str(&format!(" {:>11.3}{mark}", v));
            }
            s.push_str(&format!("   [{:.3}-{:.3}]\n", r.ci_low, r.ci_high));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("model,{},ci_low,ci_high,best\n", self.columns.join(","));
        for (i, r) in self.rows.iter().enumerate() {
            let vals: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
            let best: Vec<&str> = (0..self.columns.len())
                .filter(|&c| self.is_best(i, c))
                .map(|c| self.columns[c].as_str())
                .collect();
            s.push_str(&format!("{},{},{},{},{}\n", r.label, vals.join(","), r.ci_low, r.ci_high, best.join(";")));
        }
        s
    }
}

pub const GRID_SELECTORS: [Selector; 2] = [Selector::Gbt, Selector::Lasso];
pub const GRID_MODELS: [ModelKind; 4] = [ModelKind::Rf, ModelKind::Lr, ModelKind::Gbt, ModelKind::Dl];

/// Runs every selector x model cell with the base config's master seed (so
/// all cells share one data split) under `root/<selector>-<model>`, in
/// parallel threads, and tabulates the results in grid order.
pub fn run_grid(base: &RunConfig, root: &Path, opts: RunOptions) -> CliResult<(Vec<RunManifest>, ComparisonTable)> {
    let cells: Vec<RunConfig> = GRID_SELECTORS
        .iter()
        .flat_map(|&s| GRID_MODELS.iter().map(move |&m| (s, m)))
        .map(|(s, m)| {
            let mut c = base.clone();
            c.selection.method = s;
            c.model.kind = m;
            c.out_dir = root.join(format!("{}-{}", s.as_str(), m.as_str()));
            c
        })
        .collect();
    let results: Vec<CliResult<RunManifest>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells.iter().map(|c| scope.spawn(move || run(c, opts))).collect();
        handles.into_iter().map(|h| h.join().expect("grid worker panicked")).collect()
    });
    let manifests = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    let table = compare_manifests(&manifests)?;
    Ok((manifests, table))
}
