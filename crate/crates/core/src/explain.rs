//! Shapley-value attribution under the marginal (interventional) expectation.
//!
//! The value of a coalition `S` is the mean model output over background rows
//! after overwriting the columns in `S` with the instance's values. Exact
//! enumeration is available for small feature counts; the kernel estimator
//! fits the Shapley-kernel weighted regression over enumerated or sampled
//! coalitions with the additivity constraint imposed exactly.

use std::collections::BTreeSet;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::seed::{self, derive_seed};
use crate::Scorer;

/// Largest feature count accepted by [`exact_shapley`].
pub const MAX_EXACT_FEATURES: usize = 14;
pub const DEFAULT_BACKGROUND_ROWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub base_value: f64,
    pub attributions: Vec<f64>,
    pub prediction: f64,
    /// `base_value + sum(attributions) - prediction`.
    pub additivity_residual: f64,
}

impl AttributionReport {
    fn new(base_value: f64, attributions: Vec<f64>, prediction: f64) -> Self {
        let additivity_residual = base_value + attributions.iter().sum::<f64>() - prediction;
        AttributionReport {
            base_value,
            attributions,
            prediction,
            additivity_residual,
        }
    }
}

/// Up to `max_rows` rows drawn without replacement.
pub fn sample_background(x: &Matrix, max_rows: usize, seed: u64) -> Matrix {
    if x.rows() <= max_rows {
        return x.clone();
    }
    let mut rng = seed::derived_rng(seed, "shap_background", 0);
    let mut idx = sample(&mut rng, x.rows(), max_rows).into_vec();
    idx.sort_unstable();
    x.select_rows(&idx)
}

fn check_inputs(background: &Matrix, instance: &[f64]) -> Result<()> {
    if background.rows() == 0 {
        return Err(Error::arg("background must have at least one row"));
    }
    if background.cols() != instance.len() {
        return Err(Error::Dimension {
            expected: background.cols(),
            actual: instance.len(),
        });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coalition values for each mask; `masks[c][j]` true means feature `j` comes
/// from the instance.
fn coalition_values(predict: &dyn Scorer, background: &Matrix, instance: &[f64], masks: &[Vec<bool>]) -> Result<Vec<f64>> {
    const CHUNK_ROWS: usize = 1 << 16;
    let (b, d) = (background.rows(), background.cols());
    let per_chunk = (CHUNK_ROWS / b).max(1);
    let mut out = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(per_chunk) {
        let mut data = Vec::with_capacity(chunk.len() * b * d);
        for mask in chunk {
            for r in background.iter_rows() {
                data.extend(r.iter().zip(instance).zip(mask).map(|((&bg, &x), &m)| if m { x } else { bg }));
            }
        }
        let m = Matrix::new(chunk.len() * b, d, data)?;
        let scores = predict.score(&m)?;
        if scores.len() != m.rows() {
            return Err(Error::Dimension {
                expected: m.rows(),
                actual: scores.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::numeric("model produced a non-finite score during attribution"));
        }
        out.extend(scores.chunks(b).map(mean));
    }
    Ok(out)
}

fn base_and_prediction(predict: &dyn Scorer, background: &Matrix, instance: &[f64]) -> Result<(f64, f64)> {
    let base = mean(&predict.score(background)?);
    let pred = predict.score(&Matrix::new(1, instance.len(), instance.to_vec())?)?[0];
    if !base.is_finite() || !pred.is_finite() {
        return Err(Error::numeric("model produced a non-finite score during attribution"));
    }
    Ok((base, pred))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Classic Shapley values by enumerating all `2^d` coalitions.
pub fn exact_shapley(predict: &dyn Scorer, background: &Matrix, instance: &[f64]) -> Result<AttributionReport> {
    check_inputs(background, instance)?;
    let d = instance.len();
    if d > MAX_EXACT_FEATURES {
        return Err(Error::arg(format!(
            "exact Shapley enumeration supports at most {MAX_EXACT_FEATURES} features, got {d}"
        )));
    }
    let (base, pred) = base_and_prediction(predict, background, instance)?;
    let n_masks = 1usize << d;
    let masks: Vec<Vec<bool>> = (1..n_masks - 1).map(|m| (0..d).map(|j| m >> j & 1 == 1).collect()).collect();
    let inner = coalition_values(predict, background, instance, &masks)?;
    let mut v = Vec::with_capacity(n_masks);
    v.push(base);
    v.extend(inner);
    v.push(pred);
    // weight for a coalition of size s not containing i: s!(d-s-1)!/d!
    let weights: Vec<f64> = (0..d).map(|s| 1.0 / (d as f64 * binomial(d - 1, s))).collect();
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for m in 0..n_masks {
            if m & bit == 0 {
                *p += weights[m.count_ones() as usize] * (v[m | bit] - v[m]);
            }
        }
    }
    Ok(AttributionReport::new(base, phi, pred))
}

#[derive(Debug, Clone, PartialEq)]
struct Coalition {
    mask: Vec<bool>,
    weight: f64,
}

/// Shapley kernel total mass for coalitions of size `s`, up to a constant.
fn size_mass(d: usize, s: usize) -> f64 {
    1.0 / (s * (d - s)) as f64
}

fn all_of_size(d: usize, s: usize) -> Vec<Vec<bool>> {
    (0..d)
        .combinations(s)
        .map(|idx| {
            let mut mask = vec![false; d];
            idx.iter().for_each(|&j| mask[j] = true);
            mask
        })
        .collect()
}

/// Chooses coalitions of sizes `1..d-1`. Sizes whose proportional share of
/// the budget covers every coalition are enumerated; the rest are sampled
/// without replacement and reweighted to carry their size's kernel mass.
fn choose_coalitions(d: usize, budget: usize, rng: &mut seed::Rng) -> Vec<Coalition> {
    let mut out = Vec::new();
    let mut active: Vec<usize> = (1..d).collect();
    let mut remaining = budget as f64;
    loop {
        let total: f64 = active.iter().map(|&s| size_mass(d, s)).sum();
        let full: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&s| binomial(d, s) <= remaining * size_mass(d, s) / total + 1e-9)
            .collect();
        if full.is_empty() {
            break;
        }
        for &s in &full {
            let per = size_mass(d, s) / binomial(d, s);
            out.extend(all_of_size(d, s).into_iter().map(|mask| Coalition { mask, weight: per }));
            remaining -= binomial(d, s);
        }
        active.retain(|s| !full.contains(s));
        if active.is_empty() {
            return out;
        }
    }

    let total: f64 = active.iter().map(|&s| size_mass(d, s)).sum();
    let shares: Vec<f64> = active.iter().map(|&s| remaining.max(0.0) * size_mass(d, s) / total).collect();
    let mut counts: Vec<usize> = shares.iter().map(|v| v.floor() as usize).collect();
    let mut leftover = (remaining.max(0.0).round() as usize).saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..active.len()).collect();
    order.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(order.len() * 2) {
        if leftover == 0 {
            break;
        }
        if (counts[i] as f64) < binomial(d, active[i]) {
            counts[i] += 1;
            leftover -= 1;
        }
    }
    for (&s, &k) in active.iter().zip(&counts) {
        if k == 0 {
            continue;
        }
        let weight = size_mass(d, s) / k as f64;
        let mut seen = BTreeSet::new();
        while seen.len() < k {
            let mut idx = sample(rng, d, s).into_vec();
            idx.sort_unstable();
            if seen.insert(idx.clone()) {
                let mut mask = vec![false; d];
                idx.iter().for_each(|&j| mask[j] = true);
                out.push(Coalition { mask, weight });
            }
        }
    }
    out
}

/// Kernel-weighted least squares Shapley estimate.
///
/// `n_coalitions` counts the empty and full coalitions, which enter as the
/// exact constraint rather than as regression rows. When the budget covers
/// every coalition the result equals [`exact_shapley`] up to solver error.
pub fn kernel_shap(
    predict: &dyn Scorer,
    background: &Matrix,
    instance: &[f64],
    n_coalitions: usize,
    seed: u64,
) -> Result<AttributionReport> {
    check_inputs(background, instance)?;
    let d = instance.len();
    if n_coalitions < d + 2 {
        return Err(Error::arg(format!(
            "kernel SHAP needs at least {} coalitions for {d} features, got {n_coalitions}",
            d + 2
        )));
    }
    let (base, pred) = base_and_prediction(predict, background, instance)?;
    let delta = pred - base;
    if d == 1 {
        return Ok(AttributionReport::new(base, vec![delta], pred));
    }
    let mut rng = seed::derived_rng(seed, "kernel_shap", 0);
    let budget = if d < usize::BITS as usize - 1 {
        (n_coalitions - 2).min((1usize << d) - 2)
    } else {
        n_coalitions - 2
    };
    let coalitions = choose_coalitions(d, budget, &mut rng);
    let masks: Vec<Vec<bool>> = coalitions.iter().map(|c| c.mask.clone()).collect();
    let values = coalition_values(predict, background, instance, &masks)?;

    // Substitute phi_last = delta - sum(others) and solve the reduced system.
    let p = d - 1;
    let mut ata = DMatrix::<f64>::zeros(p, p);
    let mut atb = DVector::<f64>::zeros(p);
    for (c, v) in coalitions.iter().zip(&values) {
        let zl = f64::from(u8::from(c.mask[p]));
        let a: Vec<f64> = (0..p).map(|i| f64::from(u8::from(c.mask[i])) - zl).collect();
        let target = v - base - zl * delta;
        for i in 0..p {
            if a[i] == 0.0 {
                continue;
            }
            atb[i] += c.weight * a[i] * target;
            for j in 0..p {
                ata[(i, j)] += c.weight * a[i] * a[j];
            }
        }
    }
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::numeric("kernel SHAP regression is singular; too few distinct coalitions"))?;
    let sol = chol.solve(&atb);
    let mut phi: Vec<f64> = sol.iter().copied().collect();
    let last = delta - phi.iter().sum::<f64>();
    phi.push(last);
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("kernel SHAP produced a non-finite attribution"));
    }
    Ok(AttributionReport::new(base, phi, pred))
}

/// Default coalition budget for `d` features.
pub fn default_coalitions(d: usize) -> usize {
    2 * d + 512
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapConfig {
    pub top_k: usize,
    pub n_coalitions: Option<usize>,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            top_k: 15,
            n_coalitions: None,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature: String,
    pub column: usize,
    pub mean_abs: f64,
    /// One attribution per explained row.
    pub attributions: Vec<f64>,
    /// The feature's value in each explained row.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub base_value: f64,
    pub n_rows: usize,
    /// Top features, largest mean absolute attribution first.
    pub ranked: Vec<FeatureAttribution>,
    pub max_additivity_residual: f64,
}

impl ShapSummary {
    /// Long-format CSV: `row_id,feature,value,attribution`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row_id,feature,value,attribution\n");
        for r in 0..self.n_rows {
            for f in &self.ranked {
                s.push_str(&format!("{r},{},{},{}\n", f.feature, f.values[r], f.attributions[r]));
            }
        }
        s
    }
}

/// Explains every row of `sample` and ranks features by mean |attribution|.
pub fn shap_summary(
    predict: &dyn Scorer,
    sample: &Matrix,
    feature_names: &[String],
    background: &Matrix,
    cfg: &ShapConfig,
) -> Result<ShapSummary> {
    if sample.rows() == 0 {
        return Err(Error::arg("nothing to explain: the sample is empty"));
    }
    if feature_names.len() != sample.cols() {
        return Err(Error::Dimension {
            expected: sample.cols(),
            actual: feature_names.len(),
        });
    }
    let d = sample.cols();
    let budget = cfg.n_coalitions.unwrap_or_else(|| default_coalitions(d));
    let reports = cfg.execution.try_map(sample.rows(), |i| {
        kernel_shap(predict, background, sample.row(i), budget, derive_seed(cfg.seed, "shap_row", i as u64))
    })?;
    let n = reports.len();
    let mut features: Vec<FeatureAttribution> = (0..d)
        .map(|j| {
            let attributions: Vec<f64> = reports.iter().map(|r| r.attributions[j]).collect();
            FeatureAttribution {
                feature: feature_names[j].clone(),
                column: j,
                mean_abs: attributions.iter().map(|a| a.abs()).sum::<f64>() / n as f64,
                attributions,
                values: sample.column(j),
            }
        })
        .collect();
    features.sort_by(|a, b| b.mean_abs.total_cmp(&a.mean_abs).then(a.column.cmp(&b.column)));
    features.truncate(cfg.top_k.min(d));
    Ok(ShapSummary {
        base_value: reports[0].base_value,
        n_rows: n,
        ranked: features,
        max_additivity_residual: reports.iter().map(|r| r.additivity_residual.abs()).fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(w: Vec<f64>, b: f64) -> impl Fn(&Matrix) -> Vec<f64> + Sync {
        move |x: &Matrix| x.iter_rows().map(|r| b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>()).collect()
    }

    #[test]
    fn linear_closed_form() {
        let w = vec![0.5, -2.0, 1.5];
        let f = linear(w.clone(), 0.3);
        let bg = Matrix::new(3, 3, vec![0.0, 1.0, 2.0, 1.0, 0.0, -1.0, 2.0, 2.0, 2.0]).unwrap();
        let x = [1.0, -1.0, 0.5];
        let r = exact_shapley(&f, &bg, &x).unwrap();
        for j in 0..3 {
            let m = mean(&bg.column(j));
            assert!((r.attributions[j] - w[j] * (x[j] - m)).abs() < 1e-12);
        }
        assert!(r.additivity_residual.abs() < 1e-12);
    }

    #[test]
    fn single_background_row_equal_to_instance() {
        let f = |x: &Matrix| x.iter_rows().map(|r| (r[0] * r[1]).sin()).collect::<Vec<_>>();
        let bg = Matrix::new(1, 2, vec![0.4, 0.9]).unwrap();
        let r = exact_shapley(&f, &bg, &[0.4, 0.9]).unwrap();
        assert_eq!(r.attributions, vec![0.0, 0.0]);
    }

    #[test]
    fn kernel_full_enumeration_matches_exact() {
        let f = |x: &Matrix| x.iter_rows().map(|r| (r[0] * r[1] - r[2] + r[3] * r[3]).tanh()).collect::<Vec<_>>();
        let bg = Matrix::new(2, 4, vec![0.1, -0.3, 0.7, 0.2, -0.5, 0.4, 0.0, 1.0]).unwrap();
        let x = [0.9, 0.8, -0.2, -0.6];
        let e = exact_shapley(&f, &bg, &x).unwrap();
        let k = kernel_shap(&f, &bg, &x, 16, 1).unwrap();
        for (a, b) in e.attributions.iter().zip(&k.attributions) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_coalitions_rejected() {
        let f = linear(vec![1.0, 1.0, 1.0], 0.0);
        let bg = Matrix::zeros(1, 3);
        assert!(kernel_shap(&f, &bg, &[1.0, 1.0, 1.0], 4, 0).is_err());
        assert!(exact_shapley(&f, &Matrix::zeros(1, 15), &[0.0; 15]).is_err());
    }

    #[test]
    fn sampled_budget_is_respected() {
        let mut rng = seed::rng(0);
        let c = choose_coalitions(20, 300, &mut rng);
        assert!(c.len() <= 300 && c.len() >= 290);
        let distinct: BTreeSet<Vec<bool>> = c.iter().map(|c| c.mask.clone()).collect();
        assert_eq!(distinct.len(), c.len());
        // sizes 1 and 19 are cheap enough to enumerate
        assert_eq!(c.iter().filter(|c| c.mask.iter().filter(|&&m| m).count() == 1).count(), 20);
    }
}
