//! Tabular dataset representation, CSV I/O and column manipulation.
//!
//! Missing cells are stored as `NaN`. A value is either observed (finite) or
//! missing; the loader maps every empty, unparsable or non-finite cell to the
//! marker, so `is_missing` is the single source of truth.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MISSING: f64 = f64::NAN;

#[inline]
pub fn is_missing(v: f64) -> bool {
    !v.is_finite()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    EncodedCategorical,
    /// Subject / stay identifiers. Carried through every transform but never
    /// used as a model input.
    Identifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub missing_count: usize,
}

/// JSON sidecar describing a dataset's columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub n_rows: usize,
    pub label_column: Option<String>,
    pub group_column: Option<String>,
    pub columns: Vec<ColumnMeta>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    columns: Vec<ColumnMeta>,
    values: Matrix,
    labels: Option<Vec<u8>>,
    groups: Option<Vec<u32>>,
    label_name: Option<String>,
    group_name: Option<String>,
}

impl PartialEq for Dataset {
    /// Cell-wise equality where two missing markers compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.columns == other.columns
            && self.labels == other.labels
            && self.groups == other.groups
            && self.label_name == other.label_name
            && self.group_name == other.group_name
            && self.values.rows() == other.values.rows()
            && self.values.cols() == other.values.cols()
            && self
                .values
                .as_slice()
                .iter()
                .zip(other.values.as_slice())
                .all(|(a, b)| (is_missing(*a) && is_missing(*b)) || a.to_bits() == b.to_bits())
    }
}

impl Dataset {
    /// Builds a dataset, validating shapes, label domain and name uniqueness.
    /// Missing counts are recomputed from `values`.
    pub fn new(
        columns: Vec<(String, ColumnKind)>,
        values: Matrix,
        labels: Option<Vec<u8>>,
        groups: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = values.rows();
        if values.cols() != columns.len() && !(n == 0 && values.cols() == 0) {
            return Err(Error::Dimension {
                expected: columns.len(),
                actual: values.cols(),
            });
        }
        let mut seen = HashSet::new();
        for (name, _) in &columns {
            if !seen.insert(name.as_str()) {
                return Err(Error::data(format!("duplicate column name '{name}'")));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: l.len(),
                });
            }
            if let Some(bad) = l.iter().find(|&&v| v > 1) {
                return Err(Error::data(format!("label value {bad} is not 0 or 1")));
            }
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: g.len(),
                });
            }
        }
        let values = if values.cols() != columns.len() {
            Matrix::zeros(0, columns.len())
        } else {
            values
        };
        let columns = columns
            .into_iter()
            .enumerate()
            .map(|(j, (name, kind))| ColumnMeta {
                name,
                kind,
                missing_count: (0..n).filter(|&i| is_missing(values.get(i, j))).count(),
            })
            .collect();
        Ok(Dataset {
            columns,
            values,
            labels,
            groups,
            label_name: None,
            group_name: None,
        })
    }

    /// Convenience constructor where every column is numeric.
    pub fn from_numeric(
        names: &[&str],
        values: Matrix,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let cols = names
            .iter()
            .map(|n| (n.to_string(), ColumnKind::Numeric))
            .collect();
        Dataset::new(cols, values, labels, None)
    }

    pub fn with_label_name(mut self, name: impl Into<String>) -> Self {
        self.label_name = Some(name.into());
        self
    }

    pub fn with_group_name(mut self, name: impl Into<String>) -> Self {
        self.group_name = Some(name.into());
        self
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Labels, or a data error naming `what` needed them.
    pub fn require_labels(&self, what: &str) -> Result<&[u8]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::data(format!("{what} requires labels")))
    }

    pub fn groups(&self) -> Option<&[u32]> {
        self.groups.as_deref()
    }

    pub fn label_name(&self) -> Option<&str> {
        self.label_name.as_deref()
    }

    pub fn group_name(&self) -> Option<&str> {
        self.group_name.as_deref()
    }

    pub fn has_missing(&self) -> bool {
        self.columns.iter().any(|c| c.missing_count > 0)
    }

    pub fn metadata(&self) -> DatasetMetadata {
        DatasetMetadata {
            n_rows: self.n_rows(),
            label_column: self.label_name.clone(),
            group_column: self.group_name.clone(),
            columns: self.columns.clone(),
        }
    }

    /// Fraction of missing cells in column `col`.
    pub fn missing_fraction(&self, col: usize) -> Result<f64> {
        let meta = self.columns.get(col).ok_or_else(|| {
            Error::arg(format!(
                "column index {col} out of range ({} columns)",
                self.columns.len()
            ))
        })?;
        if self.n_rows() == 0 {
            return Ok(0.0);
        }
        Ok(meta.missing_count as f64 / self.n_rows() as f64)
    }

    /// Column subset in the requested order; labels and groups carried through.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n.as_ref())
                    .ok_or_else(|| Error::arg(format!("unknown column '{}'", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut seen = HashSet::new();
        for n in names {
            if !seen.insert(n.as_ref()) {
                return Err(Error::arg(format!("column '{}' selected twice", n.as_ref())));
            }
        }
        Ok(Dataset {
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            values: self.values.select_cols(&idx),
            labels: self.labels.clone(),
            groups: self.groups.clone(),
            label_name: self.label_name.clone(),
            group_name: self.group_name.clone(),
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let values = self.values.select_rows(idx);
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| ColumnMeta {
                name: c.name.clone(),
                kind: c.kind,
                missing_count: (0..values.rows())
                    .filter(|&i| is_missing(values.get(i, j)))
                    .count(),
            })
            .collect();
        Dataset {
            columns,
            values,
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            groups: self
                .groups
                .as_ref()
                .map(|g| idx.iter().map(|&i| g[i]).collect()),
            label_name: self.label_name.clone(),
            group_name: self.group_name.clone(),
        }
    }

    /// Same schema, new values. Used by transforms that never change shape.
    pub(crate) fn with_values(&self, values: Matrix) -> Dataset {
        debug_assert_eq!(values.rows(), self.n_rows());
        debug_assert_eq!(values.cols(), self.n_cols());
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| ColumnMeta {
                name: c.name.clone(),
                kind: c.kind,
                missing_count: (0..values.rows())
                    .filter(|&i| is_missing(values.get(i, j)))
                    .count(),
            })
            .collect();
        Dataset {
            columns,
            values,
            labels: self.labels.clone(),
            groups: self.groups.clone(),
            label_name: self.label_name.clone(),
            group_name: self.group_name.clone(),
        }
    }

    /// Appends rows sharing this dataset's schema.
    pub(crate) fn append_rows(
        &mut self,
        values: &Matrix,
        labels: Option<&[u8]>,
        groups: Option<&[u32]>,
    ) -> Result<()> {
        self.values.append_rows(values)?;
        if let (Some(l), Some(new)) = (self.labels.as_mut(), labels) {
            l.extend_from_slice(new);
        }
        if let (Some(g), Some(new)) = (self.groups.as_mut(), groups) {
            g.extend_from_slice(new);
        }
        for (j, c) in self.columns.iter_mut().enumerate() {
            c.missing_count += (0..values.rows())
                .filter(|&i| is_missing(values.get(i, j)))
                .count();
        }
        Ok(())
    }

    /// Indices of the columns used as model inputs (everything but identifiers).
    pub fn feature_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind != ColumnKind::Identifier)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.feature_indices()
            .into_iter()
            .map(|j| self.columns[j].name.clone())
            .collect()
    }

    pub fn feature_matrix(&self) -> Matrix {
        self.values.select_cols(&self.feature_indices())
    }
}

/// Loads a CSV file. See [`read_csv`].
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    group_column: Option<&str>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column, group_column)
}

/// Parses a headered CSV. Empty, unparsable and non-finite numeric cells
/// become missing. The label column must hold 0/1 everywhere or be empty
/// everywhere (an unlabelled scoring table).
pub fn read_csv<R: Read>(
    reader: R,
    label_column: &str,
    group_column: Option<&str>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::data(format!("duplicate column name '{h}'")));
        }
    }
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::data(format!("label column '{label_column}' not found")))?;
    let group_idx = match group_column {
        Some(g) => Some(
            header
                .iter()
                .position(|h| h == g)
                .ok_or_else(|| Error::data(format!("group column '{g}' not found")))?,
        ),
        None => None,
    };
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|&j| j != label_idx && Some(j) != group_idx)
        .collect();

    let mut values = Vec::new();
    let mut labels: Vec<Option<u8>> = Vec::new();
    let mut groups = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::data(format!(
                "row {}: expected {} fields, found {}",
                line + 1,
                header.len(),
                rec.len()
            )));
        }
        for &j in &feature_idx {
            values.push(parse_cell(&rec[j]));
        }
        labels.push(parse_label(&rec[label_idx], line + 1)?);
        if let Some(g) = group_idx {
            let raw = rec[g].trim();
            let day = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0 && v.fract() == 0.0 && *v <= u32::MAX as f64)
                .ok_or_else(|| {
                    Error::data(format!("row {}: group value '{raw}' is not a day index", line + 1))
                })?;
            groups.push(day as u32);
        }
    }
    let n = labels.len();
    let values = Matrix::new(n, feature_idx.len(), values)?;

    let labels = if labels.iter().all(Option::is_none) && n > 0 {
        None
    } else if labels.iter().any(Option::is_none) {
        return Err(Error::data(format!(
            "label column '{label_column}' is only partially filled"
        )));
    } else {
        Some(labels.into_iter().map(|l| l.unwrap_or(0)).collect())
    };

    let columns = feature_idx
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let name = header[j].clone();
            let kind = infer_kind(&name, &values, k);
            (name, kind)
        })
        .collect();
    let mut ds = Dataset::new(columns, values, labels, group_idx.map(|_| groups))?
        .with_label_name(label_column);
    if let Some(g) = group_column {
        ds = ds.with_group_name(g);
    }
    Ok(ds)
}

fn parse_cell(raw: &str) -> f64 {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => v,
        _ => MISSING,
    }
}

fn parse_label(raw: &str, line: usize) -> Result<Option<u8>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(Some(0)),
        Ok(v) if v == 1.0 => Ok(Some(1)),
        _ => Err(Error::data(format!("row {line}: label '{raw}' is not 0 or 1"))),
    }
}

fn infer_kind(name: &str, values: &Matrix, col: usize) -> ColumnKind {
    let lower = name.to_ascii_lowercase();
    if lower == "id" || lower.ends_with("_id") {
        return ColumnKind::Identifier;
    }
    let mut distinct = Vec::new();
    for r in 0..values.rows() {
        let v = values.get(r, col);
        if is_missing(v) {
            continue;
        }
        if v.fract() != 0.0 {
            return ColumnKind::Numeric;
        }
        if !distinct.contains(&v) {
            distinct.push(v);
            if distinct.len() > 10 {
                return ColumnKind::Numeric;
            }
        }
    }
    if distinct.is_empty() {
        ColumnKind::Numeric
    } else {
        ColumnKind::EncodedCategorical
    }
}

/// Options for [`write_csv`].
#[derive(Debug, Clone, Default)]
pub struct CsvWriteOptions<'a> {
    /// Header for the label column when the dataset carries no name.
    pub label_column: Option<&'a str>,
    pub group_column: Option<&'a str>,
    /// Extra 0/1 column flagging synthetic rows, one entry per row.
    pub provenance: Option<(&'a str, &'a [bool])>,
}

/// Serialises a dataset as CSV. Numbers use the shortest representation that
/// round-trips exactly, missing cells are written empty, so
/// `read_csv(write_csv(ds))` reproduces `ds`.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W, opts: &CsvWriteOptions) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let label_name = ds
        .label_name()
        .or(opts.label_column)
        .unwrap_or("label")
        .to_string();
    let group_name = ds
        .group_name()
        .or(opts.group_column)
        .unwrap_or("day")
        .to_string();
    if let Some((_, flags)) = opts.provenance {
        if flags.len() != ds.n_rows() {
            return Err(Error::Dimension {
                expected: ds.n_rows(),
                actual: flags.len(),
            });
        }
    }

    let mut header: Vec<String> = ds.column_names();
    header.push(label_name);
    if ds.groups().is_some() {
        header.push(group_name);
    }
    if let Some((name, _)) = opts.provenance {
        header.push(name.to_string());
    }
    w.write_record(&header)?;

    let mut record = Vec::with_capacity(header.len());
    for i in 0..ds.n_rows() {
        record.clear();
        for &v in ds.values().row(i) {
            record.push(if is_missing(v) { String::new() } else { format!("{v}") });
        }
        record.push(match ds.labels() {
            Some(l) => l[i].to_string(),
            None => String::new(),
        });
        if let Some(g) = ds.groups() {
            record.push(g[i].to_string());
        }
        if let Some((_, flags)) = opts.provenance {
            record.push(if flags[i] { "1".into() } else { "0".into() });
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>, opts: &CsvWriteOptions) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "subject_id,a,b,death\n1,1.5,,0\n2,2.5,3,1\n3,,4,0\n";

    #[test]
    fn empty_cell_is_missing() {
        let ds = read_csv(SMALL.as_bytes(), "death", None).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.column_names(), vec!["subject_id", "a", "b"]);
        assert_eq!(ds.columns()[1].missing_count, 1);
        assert_eq!(ds.columns()[2].missing_count, 1);
        assert_eq!(ds.columns()[0].kind, ColumnKind::Identifier);
        assert_eq!(ds.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(ds.feature_names(), vec!["a", "b"]);
    }

    #[test]
    fn label_domain_violation() {
        let csv = "a,death\n1,0\n2,2\n";
        assert!(matches!(read_csv(csv.as_bytes(), "death", None), Err(Error::Data(_))));
    }

    #[test]
    fn missing_label_column_and_duplicates() {
        assert!(read_csv("a,b\n1,2\n".as_bytes(), "death", None).is_err());
        assert!(read_csv("a,a,death\n1,2,0\n".as_bytes(), "death", None).is_err());
        assert!(load_csv("/definitely/not/here.csv", "death", None).is_err());
    }

    #[test]
    fn load_twice_is_identical() {
        let a = read_csv(SMALL.as_bytes(), "death", None).unwrap();
        let b = read_csv(SMALL.as_bytes(), "death", None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_fraction_cases() {
        let mut vals = vec![1.0; 30];
        for v in vals.iter_mut().take(6) {
            *v = MISSING;
        }
        for v in vals.iter_mut().skip(20) {
            *v = MISSING;
        }
        // column-major fill: col0 gets 6 missing, col1 gets 0, col2 all 10
        let mut m = Matrix::zeros(10, 3);
        for i in 0..10 {
            m.set(i, 0, vals[i]);
            m.set(i, 1, vals[10 + i]);
            m.set(i, 2, vals[20 + i]);
        }
        let ds = Dataset::from_numeric(&["x", "y", "z"], m, None).unwrap();
        assert_eq!(ds.missing_fraction(0).unwrap(), 0.6);
        assert_eq!(ds.missing_fraction(1).unwrap(), 0.0);
        assert_eq!(ds.missing_fraction(2).unwrap(), 1.0);
        assert!(ds.missing_fraction(3).is_err());
    }

    #[test]
    fn select_columns_cases() {
        let ds = read_csv(SMALL.as_bytes(), "death", None).unwrap();
        assert_eq!(ds.select_columns(&ds.column_names()).unwrap(), ds);
        let empty = ds.select_columns::<&str>(&[]).unwrap();
        assert_eq!(empty.n_cols(), 0);
        assert_eq!(empty.labels(), ds.labels());
        let rev = ds.select_columns(&["b", "a"]).unwrap();
        assert_eq!(rev.values().get(1, 0), 3.0);
        assert_eq!(rev.values().get(1, 1), 2.5);
        assert!(ds.select_columns(&["nope"]).is_err());
        let once = ds.select_columns(&["b", "a"]).unwrap();
        let twice = once.select_columns(&["b", "a"]).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn csv_round_trip_keeps_missing_and_groups() {
        let csv = "a,b,death,day\n0.1,,1,1\n1e-7,3,0,2\n";
        let ds = read_csv(csv.as_bytes(), "death", Some("day")).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf, &CsvWriteOptions::default()).unwrap();
        let back = read_csv(buf.as_slice(), "death", Some("day")).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.groups().unwrap(), &[1, 2]);
    }

    #[test]
    fn metadata_sidecar_serialises() {
        let ds = read_csv(SMALL.as_bytes(), "death", None).unwrap();
        let json = serde_json::to_string(&ds.metadata()).unwrap();
        assert!(json.contains("\"missing_count\":1"));
        assert!(json.contains("\"identifier\""));
    }
}
