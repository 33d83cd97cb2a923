//! Confusion-matrix metrics, tie-aware AUROC, stratified percentile
//! bootstrap intervals and per-day grouped reports.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::data(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

/// Tallies predictions `score >= threshold` against labels.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_lengths(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.n())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    /// Harmonic mean of precision and sensitivity; 0/0 gives `None`.
    pub fn f1(&self) -> Option<f64> {
        let p = self.precision()?;
        let r = self.sensitivity()?;
        if p + r == 0.0 {
            None
        } else {
            Some(2.0 * p * r / (p + r))
        }
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUROC via rank sums, ties counted one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numeric("NaN score passed to AUROC"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::data("AUROC is undefined when only one class is present"));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUROC where every row contributes `pos_weight` to the positive class and
/// `neg_weight` to the negative one (expected AUROC under known
/// probabilities).
pub fn weighted_auroc(scores: &[f64], pos_weight: &[f64], neg_weight: &[f64]) -> Result<f64> {
    if scores.len() != pos_weight.len() || scores.len() != neg_weight.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            actual: pos_weight.len().min(neg_weight.len()),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut neg_below, mut num) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let (p, q): (f64, f64) = order[i..=j]
            .iter()
            .fold((0.0, 0.0), |(p, q), &k| (p + pos_weight[k], q + neg_weight[k]));
        num += p * (neg_below + 0.5 * q);
        neg_below += q;
        i = j + 1;
    }
    let total_pos: f64 = pos_weight.iter().sum();
    if total_pos <= 0.0 || neg_below <= 0.0 {
        return Err(Error::data("weighted AUROC needs positive mass in both classes"));
    }
    Ok(num / (total_pos * neg_below))
}

/// Linear-interpolation sample quantile of sorted data (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_resamples: 1000,
            level: 0.95,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

/// AUROC of every stratified resample, in resample order.
pub fn bootstrap_aurocs(scores: &[f64], labels: &[u8], cfg: &BootstrapConfig) -> Result<Vec<f64>> {
    check_lengths(scores, labels)?;
    let pos: Vec<f64> = (0..scores.len()).filter(|&i| labels[i] == 1).map(|i| scores[i]).collect();
    let neg: Vec<f64> = (0..scores.len()).filter(|&i| labels[i] == 0).map(|i| scores[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::data("bootstrap CI needs both classes"));
    }
    let mut sample_labels = vec![1u8; pos.len()];
    sample_labels.extend(std::iter::repeat_n(0u8, neg.len()));
    cfg.execution.try_map(cfg.n_resamples, |b| {
        let mut rng = seed::derived_rng(cfg.seed, "bootstrap", b as u64);
        let mut s = Vec::with_capacity(sample_labels.len());
        s.extend((0..pos.len()).map(|_| pos[rng.random_range(0..pos.len())]));
        s.extend((0..neg.len()).map(|_| neg[rng.random_range(0..neg.len())]));
        auroc(&s, &sample_labels)
    })
}

/// Percentile interval of AUROC over stratified resamples (each class
/// resampled with replacement within itself).
pub fn bootstrap_ci(scores: &[f64], labels: &[u8], cfg: &BootstrapConfig) -> Result<(f64, f64)> {
    if cfg.n_resamples == 0 {
        return Err(Error::arg("bootstrap needs at least one resample"));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::arg(format!("confidence level {} outside (0, 1)", cfg.level)));
    }
    let mut stats = bootstrap_aurocs(scores, labels, cfg)?;
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - cfg.level;
    Ok((
        quantile_sorted(&stats, alpha / 2.0),
        quantile_sorted(&stats, 1.0 - alpha / 2.0),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub bootstrap: BootstrapConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            bootstrap: BootstrapConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub group: Option<u32>,
    pub threshold: f64,
    pub confusion: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub specificity: f64,
    pub auroc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
    /// Metrics whose denominator was zero; they are reported as 0.
    pub undefined: Vec<String>,
}

pub fn evaluate(scores: &[f64], labels: &[u8], cfg: &EvalConfig) -> Result<MetricsReport> {
    let c = confusion(scores, labels, cfg.threshold)?;
    let auc = auroc(scores, labels)?;
    let (ci_low, ci_high) = bootstrap_ci(scores, labels, &cfg.bootstrap)?;
    let mut undefined = Vec::new();
    let mut get = |name: &str, v: Option<f64>| {
        v.unwrap_or_else(|| {
            undefined.push(name.to_string());
            0.0
        })
    };
    let accuracy = get("accuracy", c.accuracy());
    let precision = get("precision", c.precision());
    let sensitivity = get("sensitivity", c.sensitivity());
    let f1 = get("f1", c.f1());
    let specificity = get("specificity", c.specificity());
    Ok(MetricsReport {
        n: scores.len(),
        group: None,
        threshold: cfg.threshold,
        confusion: c,
        accuracy,
        precision,
        sensitivity,
        f1,
        specificity,
        auroc: auc,
        ci_low,
        ci_high,
        ci_level: cfg.bootstrap.level,
        undefined,
    })
}

/// One report per distinct group value, ascending. Groups lacking either
/// class are skipped with a warning.
pub fn grouped_eval(
    scores: &[f64],
    labels: &[u8],
    groups: &[u32],
    cfg: &EvalConfig,
) -> Result<Vec<MetricsReport>> {
    check_lengths(scores, labels)?;
    if groups.len() != scores.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            actual: groups.len(),
        });
    }
    let mut by_group: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    let mut out = Vec::new();
    for (g, idx) in by_group {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let pos = l.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == l.len() {
            warn!("group {g} has a single class; skipped");
            continue;
        }
        let mut r = evaluate(&s, &l, cfg)?;
        r.group = Some(g);
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_cases() {
        let c = confusion(&[1.0, 0.0, 1.0, 0.0], &[1, 0, 1, 0], 0.5).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion(&[0.4; 5], &[1, 0, 1, 0, 0], 0.5).unwrap();
        assert_eq!((c.tp, c.fp), (0, 0));
        assert!(confusion(&[0.1], &[0, 1], 0.5).is_err());
    }

    #[test]
    fn metric_arithmetic() {
        let c = ConfusionCounts {
            tp: 2,
            fp: 1,
            fn_: 1,
            tn: 6,
        };
        assert_eq!(c.accuracy(), Some(0.8));
        assert_eq!(c.precision(), Some(2.0 / 3.0));
        assert_eq!(c.sensitivity(), Some(2.0 / 3.0));
        assert_eq!(c.specificity(), Some(6.0 / 7.0));
        assert!((c.f1().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_denominators_are_flagged_not_fatal() {
        let r = evaluate(&[0.1, 0.2, 0.3], &[0, 1, 0], &EvalConfig::default()).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.f1, 0.0);
        assert!(r.undefined.contains(&"precision".to_string()));
        assert!(r.undefined.contains(&"f1".to_string()));
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn weighted_auroc_matches_hard_labels() {
        let s = [0.3, 0.1, 0.3, 0.9, 0.5];
        let l = [0u8, 0, 1, 1, 0];
        let pw: Vec<f64> = l.iter().map(|&v| v as f64).collect();
        let nw: Vec<f64> = l.iter().map(|&v| 1.0 - v as f64).collect();
        let a = weighted_auroc(&s, &pw, &nw).unwrap();
        assert!((a - auroc(&s, &l).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_separated_and_deterministic() {
        let s: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let l: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let cfg = BootstrapConfig {
            n_resamples: 200,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(bootstrap_ci(&s, &l, &cfg).unwrap(), (1.0, 1.0));
        let noisy: Vec<f64> = (0..40).map(|i| ((i * 37) % 17) as f64).collect();
        let a = bootstrap_ci(&noisy, &l, &cfg).unwrap();
        assert_eq!(a, bootstrap_ci(&noisy, &l, &cfg).unwrap());
        assert!(a.0 <= a.1);
        let seq = BootstrapConfig {
            execution: Execution::Sequential,
            ..cfg
        };
        assert_eq!(a, bootstrap_ci(&noisy, &l, &seq).unwrap());
    }

    #[test]
    fn single_resample_is_degenerate() {
        let noisy: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64).collect();
        let l: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
        let cfg = BootstrapConfig {
            n_resamples: 1,
            seed: 2,
            ..Default::default()
        };
        let (lo, hi) = bootstrap_ci(&noisy, &l, &cfg).unwrap();
        assert_eq!(lo, hi);
        assert_eq!(lo, bootstrap_aurocs(&noisy, &l, &cfg).unwrap()[0]);
        let zero = BootstrapConfig {
            n_resamples: 0,
            ..cfg
        };
        assert!(bootstrap_ci(&noisy, &l, &zero).is_err());
    }

    #[test]
    fn grouped_single_group_matches_ungrouped() {
        let s: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let l: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
        let cfg = EvalConfig::default();
        let g = grouped_eval(&s, &l, &[2; 30], &cfg).unwrap();
        let mut flat = evaluate(&s, &l, &cfg).unwrap();
        flat.group = Some(2);
        assert_eq!(g, vec![flat]);
    }

    #[test]
    fn grouped_reports_are_local_and_skip_single_class() {
        let s: Vec<f64> = (0..40).map(|i| ((i * 7) % 13) as f64).collect();
        let l: Vec<u8> = (0..40).map(|i| u8::from(i % 4 == 0)).collect();
        let groups: Vec<u32> = (0..40).map(|i| if i < 20 { 1 } else { 2 }).collect();
        let cfg = EvalConfig::default();
        let g = grouped_eval(&s, &l, &groups, &cfg).unwrap();
        assert_eq!(g.len(), 2);
        let mut first = evaluate(&s[..20], &l[..20], &cfg).unwrap();
        first.group = Some(1);
        assert_eq!(g[0], first);

        let mut s2 = s.clone();
        for v in s2.iter_mut().skip(20) {
            *v = -*v;
        }
        assert_eq!(grouped_eval(&s2, &l, &groups, &cfg).unwrap()[0], g[0]);

        let mut lone = groups.clone();
        lone[1] = 9; // label 0 only
        assert_eq!(grouped_eval(&s, &l, &lone, &cfg).unwrap().len(), 2);
    }
}
