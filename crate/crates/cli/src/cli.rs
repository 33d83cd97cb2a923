//! Argument parsing and subcommand dispatch for the `mortality` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mortality_core::model::AnyModel;
use mortality_core::neural::history_csv;

use crate::compare::{compare_paths, run_grid, ComparisonTable};
use crate::config::{ModelKind, RunConfig, Selector};
use crate::error::{exit, CliError, CliResult};
use crate::run::{read_json, run, write_json, write_text, RunOptions};
use crate::stages::{self, stage_seed, Selection};

#[derive(Debug, Parser)]
#[command(name = "mortality", version, about = "Tabular mortality-risk modelling pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Run configuration (TOML, or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Reuse stage outputs of an earlier run with the same configuration.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Label column of input CSVs.
    #[arg(long, global = true, default_value = "mortality")]
    pub label_column: String,
    /// Day column of input CSVs; pass an empty string for none.
    #[arg(long, global = true, default_value = "day")]
    pub group_column: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with known ground truth.
    Synth {
        #[arg(long, default_value = "paper-shape")]
        preset: String,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground-truth JSON path (defaults next to the CSV).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Drop sparse columns, split, impute and scale.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        nan_threshold: f64,
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.15, 0.15])]
        ratios: Vec<f64>,
        #[arg(long)]
        stratified: bool,
    },
    /// Rank features with boosted trees or LASSO and keep the top ones.
    SelectFeatures {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, value_enum, default_value = "gbt")]
        method: Selector,
        #[arg(long, default_value_t = 30)]
        top: usize,
        #[arg(long)]
        keep_list: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SMOTE oversampling of the minority class.
    Resample {
        #[arg(long)]
        input: PathBuf,
        /// Selected-features JSON restricting the columns.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        #[arg(long)]
        tag_synthetic: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model.
    Train {
        #[arg(long, value_enum, default_value = "dl")]
        model: ModelKind,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy backward feature elimination on validation AUROC.
    Ablate {
        #[arg(long, value_enum, default_value = "dl")]
        model: ModelKind,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics with bootstrap AUROC intervals, pooled and per day.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        per_day: bool,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// KernelSHAP attributions and a feature ranking.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Rows to draw the background sample from (defaults to --data).
        #[arg(long)]
        background: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        rows: usize,
        #[arg(long, default_value_t = 15)]
        top: usize,
        #[arg(long, default_value_t = 50)]
        background_rows: usize,
        #[arg(long)]
        coalitions: Option<usize>,
    },
    /// Run the full pipeline from a configuration.
    Run {
        /// Use a synthetic preset instead of the config's input.
        #[arg(long)]
        preset: Option<String>,
        /// Use this CSV instead of the config's input.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Tabulate finished runs, or run and tabulate the selector x model grid.
    Compare {
        /// Run directories or manifest files.
        runs: Vec<PathBuf>,
        #[arg(long)]
        grid: bool,
    },
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out_dir: PathBuf,
    resume: bool,
    label: String,
    group: Option<String>,
}

impl Ctx {
    fn load(&self, path: &Path) -> CliResult<mortality_core::Dataset> {
        Ok(stages::load_written(path, &self.label, self.group.as_deref())?)
    }

    fn out(&self, explicit: &Option<PathBuf>, default: &str) -> CliResult<PathBuf> {
        let path = explicit.clone().unwrap_or_else(|| self.out_dir.join(default));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        Ok(path)
    }

    fn features(&self, ds: &mortality_core::Dataset, file: &Option<PathBuf>) -> CliResult<mortality_core::Dataset> {
        Ok(match file {
            Some(f) => {
                let sel: Selection = read_json(f)?;
                ds.select_columns(&sel.selected)?
            }
            None => ds.select_columns(&ds.feature_names())?,
        })
    }
}

fn build_ctx(g: &GlobalArgs) -> CliResult<Ctx> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = d.clone();
    }
    let out_dir = g.out_dir.clone().unwrap_or_else(|| {
        if g.config.is_some() {
            cfg.out_dir.clone()
        } else {
            PathBuf::from(".")
        }
    });
    Ok(Ctx {
        seed: cfg.seed,
        out_dir,
        resume: g.resume,
        label: g.label_column.clone(),
        group: Some(g.group_column.clone()).filter(|s| !s.is_empty()),
        cfg,
    })
}

fn print_table(ctx: &Ctx, table: &ComparisonTable, write: bool) -> CliResult<()> {
    print!("{}", table.render());
    if write {
        std::fs::create_dir_all(&ctx.out_dir).map_err(|e| CliError::io(&ctx.out_dir, e))?;
        write_json(&ctx.out_dir.join("comparison.json"), table)?;
        write_text(&ctx.out_dir.join("comparison.csv"), &table.to_csv())?;
        write_text(&ctx.out_dir.join("comparison.txt"), &table.render())?;
    }
    Ok(())
}

fn dispatch(g: &GlobalArgs, cmd: Command) -> CliResult<()> {
    let mut ctx = build_ctx(g)?;
    match cmd {
        Command::Synth { preset, rows, out, truth } => {
            let out = ctx.out(&out, "cohort.csv")?;
            let truth_path = truth.unwrap_or_else(|| out.with_extension("truth.json"));
            let (ds, gt) = stages::synth_cohort(&preset, rows, ctx.seed)?;
            stages::write_dataset(&ds, &out, None)?;
            write_json(&truth_path, &gt)?;
            log::info!("wrote {} rows to {} (Bayes AUROC {:.4})", ds.n_rows(), out.display(), gt.bayes_auroc);
        }
        Command::Preprocess { input, nan_threshold, ratios, stratified } => {
            ctx.cfg.preprocess.nan_threshold = nan_threshold;
            ctx.cfg.preprocess.ratios = [ratios[0], ratios[1], ratios[2]];
            ctx.cfg.preprocess.stratified = stratified;
            let ds = ctx.load(&input)?;
            let (splits, pre, report) = stages::preprocess(&ds, &ctx.cfg.preprocess, stage_seed(ctx.seed, "split"))?;
            for (name, part) in [("train.csv", &splits.train), ("val.csv", &splits.val), ("test.csv", &splits.test)] {
                stages::write_dataset(part, &ctx.out(&None, name)?, None)?;
            }
            write_json(&ctx.out(&None, "preprocessor.json")?, &pre)?;
            write_json(&ctx.out(&None, "preprocess_report.json")?, &report)?;
        }
        Command::SelectFeatures { train, method, top, keep_list, lambda, out } => {
            let s = &mut ctx.cfg.selection;
            s.method = method;
            s.top_k = top;
            s.keep_list = keep_list.or(s.keep_list.take());
            s.lasso_lambda = lambda.or(s.lasso_lambda);
            if s.method == Selector::KeepList && s.keep_list.is_none() {
                return Err(CliError::config("--method keep-list needs --keep-list"));
            }
            let ds = ctx.load(&train)?;
            let sel = stages::select_features(&ds, &ctx.cfg.selection)?;
            write_json(&ctx.out(&out, "selected_features.json")?, &sel)?;
            println!("{}", sel.selected.join(","));
        }
        Command::Resample { input, features, k, ratio, tag_synthetic, out } => {
            let ds = ctx.features(&ctx.load(&input)?, &features)?;
            let smote = crate::config::SmoteSettings {
                enabled: true,
                k_neighbors: k,
                target_ratio: ratio,
                tag_synthetic,
            };
            let res = stages::resample(&ds, &smote, stage_seed(ctx.seed, "smote"))?;
            let flags = res.provenance();
            stages::write_dataset(&res.dataset, &ctx.out(&out, "train_resampled.csv")?, tag_synthetic.then_some(flags.as_slice()))?;
            log::info!("{} original rows, {} synthetic", res.n_original, res.n_synthetic);
        }
        Command::Train { model, train, val, features, epochs, out } => {
            if let Some(e) = epochs {
                ctx.cfg.model.mlp.epochs = e;
            }
            let tr = ctx.features(&ctx.load(&train)?, &features)?;
            let va = ctx.load(&val)?;
            let (m, report, history) = stages::train_model(model, &ctx.cfg.model, &tr, &va, stage_seed(ctx.seed, "train"))?;
            let out = ctx.out(&out, "model.json")?;
            m.save(&out)?;
            write_json(&out.with_extension("report.json"), &report)?;
            if let Some(h) = history {
                write_text(&out.with_extension("history.csv"), &history_csv(&h))?;
            }
            println!("validation AUROC {:.4}", report.val_auroc);
        }
        Command::Ablate { model, train, val, features, margin, epochs, out } => {
            let tr = ctx.features(&ctx.load(&train)?, &features)?;
            let va = ctx.load(&val)?;
            let names = tr.feature_names();
            let (kept, trace) = stages::run_ablation(
                model,
                &ctx.cfg.model,
                &tr,
                &va.select_columns(&names)?,
                &names,
                margin,
                epochs.or(ctx.cfg.ablation.epochs),
                stage_seed(ctx.seed, "ablation"),
            )?;
            write_json(&ctx.out(&out, "ablation_trace.json")?, &trace)?;
            println!("{}", kept.join(","));
        }
        Command::Evaluate { model, data, per_day, bootstrap, level, threshold } => {
            let m = AnyModel::load(&model)?;
            let ds = ctx.load(&data)?;
            let ec = crate::config::EvaluationConfig {
                bootstrap,
                level,
                threshold,
                per_day,
            };
            let (report, _) = stages::evaluate_model(&m, &ds, &ec, stage_seed(ctx.seed, "bootstrap"))?;
            write_json(&ctx.out(&None, "metrics.json")?, &report)?;
            write_text(&ctx.out(&None, "metrics.csv")?, &stages::metrics_csv(m.kind(), &report))?;
            let o = &report.overall;
            println!("AUROC {:.4} [{:.4}-{:.4}]", o.auroc, o.ci_low, o.ci_high);
        }
        Command::Explain { model, data, background, rows, top, background_rows, coalitions } => {
            let m = AnyModel::load(&model)?;
            let ds = ctx.load(&data)?;
            let bg = match background {
                Some(p) => ctx.load(&p)?,
                None => ds.clone(),
            };
            let ec = crate::config::ExplainConfig {
                enabled: true,
                rows,
                top_k: top,
                background_rows,
                n_coalitions: coalitions,
            };
            let summary = stages::explain_model(&m, &bg, &ds, &ec, stage_seed(ctx.seed, "shap"))?;
            write_json(&ctx.out(&None, "shap_summary.json")?, &summary)?;
            write_text(&ctx.out(&None, "shap_values.csv")?, &summary.to_csv())?;
            for f in &summary.ranked {
                println!("{:<24} {:.5}", f.feature, f.mean_abs);
            }
        }
        Command::Run { preset, input } => {
            if preset.is_some() || input.is_some() {
                ctx.cfg.input.synth_preset = preset;
                ctx.cfg.input.path = input;
            }
            if g.out_dir.is_none() && g.config.is_none() {
                ctx.cfg.out_dir = PathBuf::from("run");
            }
            let m = run(&ctx.cfg, RunOptions { resume: ctx.resume })?;
            if let Some(r) = &m.final_metrics {
                println!(
                    "{}-{}: test AUROC {:.4} [{:.4}-{:.4}], specificity {:.4}",
                    m.selector, m.model, r.auroc, r.ci_low, r.ci_high, r.specificity
                );
            }
        }
        Command::Compare { runs, grid } => {
            if grid {
                if !runs.is_empty() {
                    return Err(CliError::config("give either run directories or --grid, not both"));
                }
                let root = ctx.out_dir.clone();
                let (_, table) = run_grid(&ctx.cfg, &root, RunOptions { resume: ctx.resume })?;
                print_table(&ctx, &table, true)?;
            } else {
                let table = compare_paths(&runs)?;
                print_table(&ctx, &table, g.out_dir.is_some())?;
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    let level = if cli.global.quiet { "error" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli.global, cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
