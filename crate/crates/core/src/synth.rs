//! Seeded synthetic cohorts with known ground truth.
//!
//! Informative features are standard normal and drive a logistic outcome
//! whose signal strength grows with the row's day index; noise features are
//! independent standard normals. Values go missing completely at random after
//! labels are drawn. Every column has its own random substream, so columns
//! can be generated in parallel without changing the output.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset, MISSING};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::metrics::weighted_auroc;
use crate::seed::{self, derived_rng};
use crate::sigmoid;

pub const LABEL_NAME: &str = "mortality";
pub const GROUP_NAME: &str = "day";
pub const ID_NAME: &str = "subject_id";
const BAYES_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_rows: usize,
    pub n_informative: usize,
    pub n_noise: usize,
    pub coefficients: Vec<f64>,
    /// Fixed intercept; when `None` it is tuned to hit `positive_fraction`.
    pub intercept: Option<f64>,
    pub missing_rate: f64,
    pub positive_fraction: f64,
    pub days: u32,
    pub day_signal_gain: f64,
    pub seed: u64,
    /// Emit a leading `subject_id` identifier column.
    pub with_identifier: bool,
}

impl CohortSpec {
    /// 3487 rows, 30 informative and 20 noise features, about 20.7% positive,
    /// four days with signal growing day by day.
    pub fn paper_shape(seed: u64) -> Self {
        let n_inf = 30;
        let coefficients = (0..n_inf)
            .map(|j| {
                let magnitude = 0.085 * (1.0 - 0.6 * j as f64 / (n_inf - 1) as f64);
                if j % 2 == 0 {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect();
        CohortSpec {
            n_rows: 3487,
            n_informative: n_inf,
            n_noise: 20,
            coefficients,
            intercept: None,
            missing_rate: 0.05,
            positive_fraction: 0.207,
            days: 4,
            day_signal_gain: 3.0,
            seed,
            with_identifier: true,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "paper-shape" | "paper_shape" => Ok(Self::paper_shape(seed)),
            other => Err(Error::arg(format!("unknown synth preset '{other}' (known: paper-shape)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_rows == 0 {
            problems.push("n_rows must be positive".to_string());
        }
        if self.coefficients.len() != self.n_informative {
            problems.push(format!(
                "{} coefficients given for {} informative features",
                self.coefficients.len(),
                self.n_informative
            ));
        }
        if self.n_informative + self.n_noise == 0 {
            problems.push("cohort needs at least one feature".to_string());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            problems.push(format!("missing_rate {} outside [0, 1)", self.missing_rate));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            problems.push(format!("positive fraction {} outside (0, 1)", self.positive_fraction));
        }
        if self.days == 0 {
            problems.push("days must be at least 1".to_string());
        }
        if !(self.day_signal_gain >= 0.0 && self.day_signal_gain.is_finite()) {
            problems.push("day_signal_gain must be finite and non-negative".to_string());
        }
        if self.coefficients.iter().any(|c| !c.is_finite()) || self.intercept.is_some_and(|b| !b.is_finite()) {
            problems.push("coefficients and intercept must be finite".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::arg(problems.join("; ")))
        }
    }

    pub fn informative_names(&self) -> Vec<String> {
        (1..=self.n_informative).map(|j| format!("inf_{j:02}")).collect()
    }

    pub fn noise_names(&self) -> Vec<String> {
        (1..=self.n_noise).map(|j| format!("noise_{j:02}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub informative: Vec<String>,
    pub noise: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub day_signal_gain: f64,
    pub realized_positive_fraction: f64,
    /// Bayes AUROC pooled over days, under the uniform day distribution.
    pub bayes_auroc: f64,
    /// Bayes AUROC within each day, starting at day 1.
    pub bayes_auroc_per_day: Vec<f64>,
}

fn normal_column(seed: u64, tag: &str, j: usize, n: usize) -> Vec<f64> {
    let mut rng = derived_rng(seed, tag, j as u64);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Signal multiplier for a day.
fn day_scale(day: u32, gain: f64) -> f64 {
    1.0 + f64::from(day) * gain
}

fn positives(z: &[f64], days: &[u32], u: &[f64], b: f64, gain: f64) -> usize {
    z.iter()
        .zip(days)
        .zip(u)
        .filter(|((&zi, &d), &ui)| ui < sigmoid(b + day_scale(d, gain) * zi))
        .count()
}

/// Smallest-magnitude-search bisection on the intercept so that the drawn
/// labels have the requested positive count (the uniforms are held fixed, so
/// the count is monotone in the intercept).
fn tune_intercept(z: &[f64], days: &[u32], u: &[f64], target: f64, gain: f64) -> Result<f64> {
    let n = z.len() as f64;
    let goal = (target * n).round();
    let (mut lo, mut hi) = (-60.0, 60.0);
    let count = |b: f64| positives(z, days, u, b, gain) as f64;
    if count(lo) > goal || count(hi) < goal {
        return Err(Error::arg(format!("positive fraction {target} is unattainable for this cohort")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count(mid) < goal {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let b = hi;
    if (count(b) / n - target).abs() > 0.01 {
        return Err(Error::arg(format!("positive fraction {target} is unattainable for this cohort")));
    }
    Ok(b)
}

/// Monte Carlo Bayes AUROC within each day and pooled.
///
/// The optimal score within a day is monotone in `w.x ~ N(0, |w|)`, so a
/// scalar draw suffices. Positives and negatives are weighted by the true
/// conditional probabilities.
pub fn bayes_auroc(norm_w: f64, intercept: f64, days: u32, gain: f64, draws: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    let mut rng = derived_rng(seed, "bayes_oracle", 0);
    let z: Vec<f64> = (0..draws)
        .map(|_| norm_w * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let mut per_day = Vec::with_capacity(days as usize);
    let mut pooled_scores = Vec::with_capacity(draws);
    let mut pooled_pos = Vec::with_capacity(draws);
    for day in 1..=days {
        let p: Vec<f64> = z.iter().map(|&zi| sigmoid(intercept + day_scale(day, gain) * zi)).collect();
        let neg: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        per_day.push(weighted_auroc(&z, &p, &neg)?);
    }
    let mut day_rng = derived_rng(seed, "bayes_oracle_day", 0);
    for &zi in &z {
        let day = day_rng.random_range(1..=days);
        let p = sigmoid(intercept + day_scale(day, gain) * zi);
        pooled_scores.push(p);
        pooled_pos.push(p);
    }
    let pooled_neg: Vec<f64> = pooled_pos.iter().map(|v| 1.0 - v).collect();
    let pooled = weighted_auroc(&pooled_scores, &pooled_pos, &pooled_neg)?;
    Ok((pooled, per_day))
}

pub fn generate(spec: &CohortSpec) -> Result<(Dataset, GroundTruth)> {
    generate_with(spec, Execution::default())
}

pub fn generate_with(spec: &CohortSpec, execution: Execution) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let n = spec.n_rows;
    let n_feat = spec.n_informative + spec.n_noise;
    let columns: Vec<Vec<f64>> = execution.map(n_feat, |j| normal_column(spec.seed, "synth_column", j, n));

    let mut day_rng = derived_rng(spec.seed, "synth_day", 0);
    let days: Vec<u32> = (0..n).map(|_| day_rng.random_range(1..=spec.days)).collect();
    let z: Vec<f64> = (0..n)
        .map(|i| spec.coefficients.iter().enumerate().map(|(j, w)| w * columns[j][i]).sum())
        .collect();
    let mut label_rng = derived_rng(spec.seed, "synth_label", 0);
    let u: Vec<f64> = (0..n).map(|_| label_rng.random::<f64>()).collect();
    let intercept = match spec.intercept {
        Some(b) => b,
        None => tune_intercept(&z, &days, &u, spec.positive_fraction, spec.day_signal_gain)?,
    };
    let labels: Vec<u8> = (0..n)
        .map(|i| u8::from(u[i] < sigmoid(intercept + day_scale(days[i], spec.day_signal_gain) * z[i])))
        .collect();

    let columns: Vec<Vec<f64>> = execution.map(n_feat, |j| {
        let mut col = columns[j].clone();
        if spec.missing_rate > 0.0 {
            let mut rng = derived_rng(spec.seed, "synth_missing", j as u64);
            for v in &mut col {
                if rng.random::<f64>() < spec.missing_rate {
                    *v = MISSING;
                }
            }
        }
        col
    });

    let mut metas = Vec::with_capacity(n_feat + 1);
    if spec.with_identifier {
        metas.push((ID_NAME.to_string(), ColumnKind::Identifier));
    }
    metas.extend(
        spec.informative_names()
            .into_iter()
            .chain(spec.noise_names())
            .map(|name| (name, ColumnKind::Numeric)),
    );
    let width = metas.len();
    let offset = usize::from(spec.with_identifier);
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        if spec.with_identifier {
            data.push((i + 1) as f64);
        }
        data.extend(columns.iter().map(|c| c[i]));
    }
    debug_assert_eq!(data.len(), n * (n_feat + offset));
    let values = Matrix::new(n, width, data)?;
    let ds = Dataset::new(metas, values, Some(labels.clone()), Some(days))?
        .with_label_name(LABEL_NAME)
        .with_group_name(GROUP_NAME);

    let norm_w = spec.coefficients.iter().map(|w| w * w).sum::<f64>().sqrt();
    let (pooled, per_day) = bayes_auroc(norm_w, intercept, spec.days, spec.day_signal_gain, BAYES_DRAWS, spec.seed)?;
    let truth = GroundTruth {
        informative: spec.informative_names(),
        noise: spec.noise_names(),
        coefficients: spec.coefficients.clone(),
        intercept,
        day_signal_gain: spec.day_signal_gain,
        realized_positive_fraction: labels.iter().map(|&y| f64::from(y)).sum::<f64>() / n as f64,
        bayes_auroc: pooled,
        bayes_auroc_per_day: per_day,
    };
    Ok((ds, truth))
}

/// Train/validation pair for exercising feature ablation.
///
/// The first `n_informative` columns carry real signal in both sets. The
/// remaining `n_adversarial` columns leak the label in the training set only
/// and are pure noise on validation, so a model that leans on them scores
/// worse on validation.
pub fn ablation_fixture(n: usize, n_informative: usize, n_adversarial: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_informative == 0 {
        return Err(Error::arg("ablation fixture needs an informative feature"));
    }
    let mut names: Vec<String> = (1..=n_informative).map(|j| format!("inf_{j}")).collect();
    names.extend((1..=n_adversarial).map(|j| format!("adv_{j}")));
    let names_ref: Vec<&str> = names.iter().map(String::as_str).collect();
    let build = |part: &str| -> Result<Dataset> {
        let mut rng = seed::derived_rng(seed, &format!("ablation_fixture/{part}"), 0);
        let mut data = Vec::with_capacity(n * names.len());
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..n_informative).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z: f64 = x.iter().sum();
            let y = u8::from(rng.random::<f64>() < sigmoid(z));
            data.extend(&x);
            for _ in 0..n_adversarial {
                let e: f64 = StandardNormal.sample(&mut rng);
                data.push(if part == "train" { (2.0 * f64::from(y) - 1.0) * 0.8 + e } else { e });
            }
            labels.push(y);
        }
        Dataset::from_numeric(&names_ref, Matrix::new(n, names.len(), data)?, Some(labels))
    };
    Ok((build("train")?, build("validation")?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CohortSpec {
        CohortSpec {
            n_rows: 2000,
            n_informative: 3,
            n_noise: 2,
            coefficients: vec![1.0, -0.5, 0.25],
            intercept: None,
            missing_rate: 0.1,
            positive_fraction: 0.3,
            days: 3,
            day_signal_gain: 0.2,
            seed,
            with_identifier: true,
        }
    }

    #[test]
    fn deterministic_and_execution_independent() {
        let spec = small(5);
        let a = generate_with(&spec, Execution::Sequential).unwrap();
        let b = generate_with(&spec, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_and_fraction() {
        let (ds, truth) = generate(&small(1)).unwrap();
        assert_eq!(ds.n_rows(), 2000);
        assert_eq!(ds.n_cols(), 6);
        assert_eq!(ds.columns()[0].kind, ColumnKind::Identifier);
        assert!((truth.realized_positive_fraction - 0.3).abs() <= 0.01);
        let miss = ds.missing_fraction(1).unwrap();
        assert!((0.07..0.13).contains(&miss));
        assert_eq!(ds.missing_fraction(0).unwrap(), 0.0);
        assert!(truth.bayes_auroc_per_day.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small(0);
        s.coefficients.pop();
        s.positive_fraction = 1.0;
        let msg = generate(&s).unwrap_err().to_string();
        assert!(msg.contains("coefficients") && msg.contains("positive fraction"));
    }
}
