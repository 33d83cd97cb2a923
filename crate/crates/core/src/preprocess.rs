//! Missing-value filtering, median imputation, `[-1, 1]` min-max scaling and
//! the seeded train/validation/test split.
//!
//! Imputation and scaling are fit/apply pairs: statistics come from the
//! training split only and are replayed on validation and test data.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{is_missing, ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::seed;

/// Drops every column whose missing count exceeds `threshold * n_rows`.
/// A column at exactly the threshold is kept.
pub fn drop_high_nan_columns(ds: &Dataset, threshold: f64) -> Result<(Dataset, Vec<String>)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::arg(format!("nan threshold {threshold} outside [0, 1]")));
    }
    let limit = threshold * ds.n_rows() as f64;
    let (keep, dropped): (Vec<_>, Vec<_>) = ds
        .columns()
        .iter()
        .partition(|c| c.missing_count as f64 <= limit);
    let keep: Vec<&str> = keep.iter().map(|c| c.name.as_str()).collect();
    let dropped = dropped.iter().map(|c| c.name.clone()).collect();
    Ok((ds.select_columns(&keep)?, dropped))
}

/// Median of the observed values; the even-count median is the mean of the
/// two middle order statistics. `None` when nothing is observed.
pub fn observed_median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| !is_missing(*x)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Per-column medians fitted on a training table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianImputer {
    pub medians: BTreeMap<String, f64>,
}

impl MedianImputer {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let mut medians = BTreeMap::new();
        for (j, c) in ds.columns().iter().enumerate() {
            let m = observed_median(ds.values().column(j)).ok_or_else(|| {
                Error::data(format!("column '{}' has no observed values to impute from", c.name))
            })?;
            medians.insert(c.name.clone(), m);
        }
        Ok(MedianImputer { medians })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let mut values = ds.values().clone();
        for (j, c) in ds.columns().iter().enumerate() {
            if c.missing_count == 0 {
                continue;
            }
            let m = *self
                .medians
                .get(&c.name)
                .ok_or_else(|| Error::arg(format!("no fitted median for column '{}'", c.name)))?;
            for i in 0..values.rows() {
                if is_missing(values.get(i, j)) {
                    values.set(i, j, m);
                }
            }
        }
        Ok(ds.with_values(values))
    }
}

/// Fills each column's missing cells with that column's own median.
pub fn impute_median(ds: &Dataset) -> Result<Dataset> {
    MedianImputer::fit(ds)?.apply(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

/// Training-set column ranges for the `2 (x - min) / (max - min) - 1` map.
/// Serialised as a JSON object keyed by column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalerParams {
    pub columns: BTreeMap<String, ColumnRange>,
}

impl ScalerParams {
    /// Columns with `min == max`; they scale to 0.
    pub fn constant_columns(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|(_, r)| r.min == r.max)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// Fits ranges on every non-identifier column.
pub fn fit_scale_min_max(ds: &Dataset) -> Result<ScalerParams> {
    let mut columns = BTreeMap::new();
    for j in ds.feature_indices() {
        let meta = &ds.columns()[j];
        if meta.missing_count > 0 {
            return Err(Error::data(format!(
                "column '{}' still has missing values; impute before scaling",
                meta.name
            )));
        }
        let col = ds.values().column(j);
        let (min, max) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if ds.n_rows() == 0 {
            return Err(Error::data("cannot fit a scaler on an empty table"));
        }
        columns.insert(meta.name.clone(), ColumnRange { min, max });
    }
    let params = ScalerParams { columns };
    for c in params.constant_columns() {
        warn!("column '{c}' is constant in the training data; it scales to 0");
    }
    Ok(params)
}

#[inline]
pub fn scale_value(v: f64, r: ColumnRange) -> f64 {
    if r.max == r.min {
        0.0
    } else {
        2.0 * (v - r.min) / (r.max - r.min) - 1.0
    }
}

/// Applies fitted ranges. Identifier columns pass through unchanged; any
/// other column without a fitted range is an error.
pub fn apply_scale_min_max(ds: &Dataset, p: &ScalerParams) -> Result<Dataset> {
    let mut values = ds.values().clone();
    for j in ds.feature_indices() {
        let name = &ds.columns()[j].name;
        let r = *p
            .columns
            .get(name)
            .ok_or_else(|| Error::arg(format!("column '{name}' was not seen when fitting the scaler")))?;
        for i in 0..values.rows() {
            let v = values.get(i, j);
            if !is_missing(v) {
                values.set(i, j, scale_value(v, r));
            }
        }
    }
    Ok(ds.with_values(values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    /// (train, validation, test)
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    /// Permute within each class separately so every part keeps the base rate.
    #[serde(default)]
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: (0.70, 0.15, 0.15),
            seed: 0,
            stratified: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::arg("split ratios must all be positive"));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("split ratios sum to {}, not 1", a + b + c)));
        }
        Ok(())
    }

    /// (train, val, test) sizes: floor allocation for val/test, remainder to train.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if n < 3 {
            return Err(Error::arg(format!("cannot split {n} rows three ways")));
        }
        let part = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let val = part(self.ratios.1);
        let test = part(self.ratios.2);
        if val == 0 || test == 0 || val + test >= n {
            return Err(Error::arg(format!(
                "ratios {:?} leave an empty part for n = {n}",
                self.ratios
            )));
        }
        Ok((n - val - test, val, test))
    }
}

/// Row indices of the three parts, each sorted ascending.
pub fn split_indices(n: usize, labels: Option<&[u8]>, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    let (n_train, n_val, _) = spec.sizes(n)?;
    let mut rng = seed::derived_rng(spec.seed, "split", 0);
    let mut parts: [Vec<usize>; 3] = Default::default();
    if spec.stratified {
        let labels = labels.ok_or_else(|| Error::arg("stratified split requires labels"))?;
        for class in [0u8, 1] {
            let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut rng);
            let m = idx.len() as f64;
            let v = (m * spec.ratios.1 + 1e-9).floor() as usize;
            let t = (m * spec.ratios.2 + 1e-9).floor() as usize;
            parts[1].extend_from_slice(&idx[..v]);
            parts[2].extend_from_slice(&idx[v..v + t]);
            parts[0].extend_from_slice(&idx[v + t..]);
        }
        if parts.iter().any(Vec::is_empty) {
            return Err(Error::arg("stratified split left an empty part"));
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        parts[0] = idx[..n_train].to_vec();
        parts[1] = idx[n_train..n_train + n_val].to_vec();
        parts[2] = idx[n_train + n_val..].to_vec();
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Seeded uniform split into (train, validation, test).
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [a, b, c] = split_indices(ds.n_rows(), ds.labels(), spec)?;
    Ok((ds.select_rows(&a), ds.select_rows(&b), ds.select_rows(&c)))
}

/// Fitted preprocessing state replayed on held-out splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub imputer: MedianImputer,
    pub scaler: ScalerParams,
}

impl Preprocessor {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let imputer = MedianImputer::fit(train)?;
        let scaler = fit_scale_min_max(&imputer.apply(train)?)?;
        Ok(Preprocessor { imputer, scaler })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        apply_scale_min_max(&self.imputer.apply(ds)?, &self.scaler)
    }
}

/// Columns of kind [`ColumnKind::Identifier`] by name.
pub fn identifier_columns(ds: &Dataset) -> Vec<String> {
    ds.columns()
        .iter()
        .filter(|c| c.kind == ColumnKind::Identifier)
        .map(|c| c.name.clone())
        .collect()
}
