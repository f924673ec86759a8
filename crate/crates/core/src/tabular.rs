//! Tabular data model: CSV ingestion, imputation, encoding and the design
//! matrix consumed by the propensity models and balance metrics.
//!
//! A [`Dataset`] holds raw cells (numbers or category labels, possibly
//! missing). [`impute`] fills the gaps and [`encode`] turns the result into a
//! [`DesignMatrix`]: z-scored continuous columns, one-hot categorical blocks,
//! plus the raw covariate values that balance diagnostics are computed on.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Treatment,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Ordered column list with exactly one treatment and one outcome column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    columns: Vec<ColumnSchema>,
    treatment: usize,
    outcome: usize,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        let find_unique = |kind: ColumnKind| -> Result<usize> {
            let hits: Vec<usize> = columns
                .iter()
                .enumerate()
                .filter(|(_, c)| c.kind == kind)
                .map(|(i, _)| i)
                .collect();
            match hits.as_slice() {
                [i] => Ok(*i),
                _ => Err(Error::Schema(format!(
                    "expected exactly one {kind:?} column, found {}",
                    hits.len()
                ))),
            }
        };
        let treatment = find_unique(ColumnKind::Treatment)?;
        let outcome = find_unique(ColumnKind::Outcome)?;
        Ok(Self {
            columns,
            treatment,
            outcome,
        })
    }

    /// Parses `{"column": "continuous" | "categorical" | "treatment" | "outcome", ...}`.
    /// Key order is preserved.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(s)?;
        let mut columns = Vec::with_capacity(map.len());
        for (name, kind) in map {
            let kind: ColumnKind = serde_json::from_value(kind.clone())
                .map_err(|_| Error::Schema(format!("column `{name}` has unknown kind {kind}")))?;
            columns.push(ColumnSchema { name, kind });
        }
        Self::new(columns)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut s = String::new();
        File::open(path)?.read_to_string(&mut s)?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .columns
            .iter()
            .map(|c| (c.name.clone(), serde_json::to_value(c.kind).expect("kind serializes")))
            .collect();
        serde_json::to_string_pretty(&map).expect("schema serializes")
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn treatment_index(&self) -> usize {
        self.treatment
    }

    pub fn outcome_index(&self) -> usize {
        self.outcome
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Number(f64),
    Label(String),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    fn number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    rows: Vec<Vec<Cell>>,
}

impl Dataset {
    /// Builds a dataset, checking cell types against the schema. Treatment
    /// cells must be `Number(0|1)`, outcome cells must be present.
    pub fn new(schema: Schema, rows: Vec<Vec<Cell>>) -> Result<Self> {
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.columns.len() {
                return Err(Error::Validation(format!(
                    "row {r} has {} cells, schema has {} columns",
                    row.len(),
                    schema.columns.len()
                )));
            }
            for (col, cell) in schema.columns.iter().zip(row) {
                let ok = match (col.kind, cell) {
                    (ColumnKind::Treatment, Cell::Number(v)) => *v == 0.0 || *v == 1.0,
                    (ColumnKind::Treatment, _) | (ColumnKind::Outcome, Cell::Missing) => false,
                    (ColumnKind::Outcome | ColumnKind::Continuous, Cell::Number(v)) => v.is_finite(),
                    (ColumnKind::Outcome | ColumnKind::Continuous, Cell::Label(_)) => false,
                    (ColumnKind::Categorical, Cell::Number(_)) => false,
                    _ => true,
                };
                if !ok {
                    return Err(Error::Validation(format!(
                        "row {r}, column `{}`: invalid cell {cell:?}",
                        col.name
                    )));
                }
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn missing_count(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .filter(|c| c.is_missing())
            .count()
    }

    pub fn treatment(&self) -> Vec<bool> {
        let t = self.schema.treatment;
        self.rows.iter().map(|r| r[t] == Cell::Number(1.0)).collect()
    }

    pub fn outcome(&self) -> Vec<f64> {
        let o = self.schema.outcome;
        self.rows
            .iter()
            .map(|r| r[o].number().expect("outcome validated"))
            .collect()
    }

    /// Writes the dataset as CSV with a header row; missing cells are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Missing => String::new(),
                Cell::Number(v) => format!("{v}"),
                Cell::Label(s) => s.clone(),
            }))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_treatment(raw: &str) -> Option<f64> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" => Some(1.0),
        "false" => Some(0.0),
        s => match s.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => Some(v),
            _ => None,
        },
    }
}

/// Reads a CSV with a header row. Columns not named in the schema are
/// ignored; the dataset keeps schema column order.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h.trim() == c.name)
                .ok_or_else(|| Error::Schema(format!("column `{}` missing from CSV header", c.name)))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(positions.len());
        for (col, &pos) in schema.columns.iter().zip(&positions) {
            let raw = record.get(pos).unwrap_or("").trim();
            let cell = if raw.is_empty() {
                Cell::Missing
            } else {
                match col.kind {
                    ColumnKind::Treatment => {
                        Cell::Number(parse_treatment(raw).ok_or_else(|| {
                            Error::Validation(format!("row {r}: treatment value `{raw}` is not binary"))
                        })?)
                    }
                    ColumnKind::Continuous | ColumnKind::Outcome => Cell::Number(raw.parse::<f64>().map_err(|_| {
                        Error::Validation(format!("row {r}, column `{}`: `{raw}` is not numeric", col.name))
                    })?),
                    ColumnKind::Categorical => Cell::Label(raw.to_string()),
                }
            };
            row.push(cell);
        }
        rows.push(row);
    }
    Dataset::new(schema.clone(), rows)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    read_csv(File::open(path)?, schema)
}

/// Fills missing continuous cells with the observed column mean and missing
/// categorical cells with the most frequent label (ties go to the
/// lexicographically smallest label).
pub fn impute(d: &Dataset) -> Result<Dataset> {
    let mut rows = d.rows.clone();
    for (j, col) in d.schema.columns.iter().enumerate() {
        if !rows.iter().any(|r| r[j].is_missing()) {
            continue;
        }
        let fill = match col.kind {
            ColumnKind::Continuous => {
                let observed: Vec<f64> = rows.iter().filter_map(|r| r[j].number()).collect();
                if observed.is_empty() {
                    return Err(Error::Unimputable(col.name.clone()));
                }
                Cell::Number(observed.iter().sum::<f64>() / observed.len() as f64)
            }
            ColumnKind::Categorical => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for r in &rows {
                    if let Cell::Label(s) = &r[j] {
                        *counts.entry(s.as_str()).or_default() += 1;
                    }
                }
                // max_by_key keeps the last maximum; iterate in reverse so the
                // smallest label wins ties.
                let mode = counts
                    .iter()
                    .rev()
                    .max_by_key(|(_, &c)| c)
                    .map(|(s, _)| s.to_string())
                    .ok_or_else(|| Error::Unimputable(col.name.clone()))?;
                Cell::Label(mode)
            }
            ColumnKind::Treatment | ColumnKind::Outcome => {
                return Err(Error::Internal(format!(
                    "missing value in required column `{}`",
                    col.name
                )))
            }
        };
        for r in rows.iter_mut() {
            if r[j].is_missing() {
                r[j] = fill.clone();
            }
        }
    }
    Dataset::new(d.schema.clone(), rows)
}

/// Population statistics used to z-score a continuous column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    /// Population (1/N) standard deviation; 0 for constant columns.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValues {
    Continuous(Vec<f64>),
    /// Level codes index into `levels`.
    Categorical {
        codes: Vec<u32>,
        levels: Vec<String>,
    },
}

impl CovariateValues {
    fn select(&self, rows: &[usize]) -> Self {
        match self {
            CovariateValues::Continuous(v) => CovariateValues::Continuous(rows.iter().map(|&r| v[r]).collect()),
            CovariateValues::Categorical { codes, levels } => CovariateValues::Categorical {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                levels: levels.clone(),
            },
        }
    }
}

/// One original covariate column: its raw values and where it lives in the
/// encoded feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: CovariateValues,
    pub features: Range<usize>,
    pub scaling: Option<Scaling>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    features: Array2<f64>,
    feature_names: Vec<String>,
    treatment: Vec<bool>,
    outcome: Vec<f64>,
    group_index: Vec<usize>,
    covariates: Vec<Covariate>,
    warnings: Vec<String>,
}

impl DesignMatrix {
    /// Assembles a design matrix from already-encoded parts.
    pub fn from_parts(
        features: Array2<f64>,
        feature_names: Vec<String>,
        treatment: Vec<bool>,
        outcome: Vec<f64>,
        covariates: Vec<Covariate>,
    ) -> Result<Self> {
        let n = features.nrows();
        if feature_names.len() != features.ncols() || treatment.len() != n || outcome.len() != n {
            return Err(Error::Validation("design matrix parts disagree in shape".into()));
        }
        for c in &covariates {
            let len = match &c.values {
                CovariateValues::Continuous(v) => v.len(),
                CovariateValues::Categorical { codes, .. } => codes.len(),
            };
            if len != n || c.features.end > features.ncols() {
                return Err(Error::Validation(format!(
                    "covariate `{}` does not align with the feature matrix",
                    c.name
                )));
            }
        }
        Ok(Self {
            features,
            feature_names,
            treatment,
            outcome,
            group_index: (0..n).collect(),
            covariates,
            warnings: Vec::new(),
        })
    }

    /// Continuous-only design matrix whose features are the raw values
    /// (no standardization). Convenient for synthetic data and tests.
    pub fn from_continuous(
        names: &[String],
        columns: &[Vec<f64>],
        treatment: Vec<bool>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        let n = treatment.len();
        let mut features = Array2::zeros((n, columns.len()));
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Validation(format!("column {j} has wrong length")));
            }
            for (i, &v) in col.iter().enumerate() {
                features[[i, j]] = v;
            }
        }
        let covariates = names
            .iter()
            .zip(columns)
            .enumerate()
            .map(|(j, (name, col))| Covariate {
                name: name.clone(),
                values: CovariateValues::Continuous(col.clone()),
                features: j..j + 1,
                scaling: None,
            })
            .collect();
        Self::from_parts(features, names.to_vec(), treatment, outcome, covariates)
    }

    pub fn n_rows(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    /// Row of the originating [`Dataset`] for each sample.
    pub fn group_index(&self) -> &[usize] {
        &self.group_index
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Rows `rows` (in that order, repeats allowed). Encoding state is kept,
    /// nothing is re-standardized.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            treatment: rows.iter().map(|&r| self.treatment[r]).collect(),
            outcome: rows.iter().map(|&r| self.outcome[r]).collect(),
            group_index: rows.iter().map(|&r| self.group_index[r]).collect(),
            covariates: self
                .covariates
                .iter()
                .map(|c| Covariate {
                    name: c.name.clone(),
                    values: c.values.select(rows),
                    features: c.features.clone(),
                    scaling: c.scaling,
                })
                .collect(),
            warnings: Vec::new(),
        }
    }

    /// Same samples with a different treatment labelling.
    pub fn with_treatment(mut self, treatment: Vec<bool>) -> Result<Self> {
        if treatment.len() != self.n_rows() {
            return Err(Error::Validation("treatment length mismatch".into()));
        }
        self.treatment = treatment;
        Ok(self)
    }

    /// Recovers the raw values of continuous covariate `index` from its
    /// standardized feature column.
    pub fn unstandardize(&self, index: usize) -> Option<Vec<f64>> {
        let c = self.covariates.get(index)?;
        let s = c.scaling?;
        let col = self.features.column(c.features.start);
        Some(col.iter().map(|z| z * s.std + s.mean).collect())
    }
}

/// Encodes an imputed dataset: continuous columns are z-scored with
/// population statistics of the full dataset, categorical columns become one
/// indicator per observed level (levels sorted).
pub fn encode(d: &Dataset) -> Result<DesignMatrix> {
    if d.missing_count() > 0 {
        return Err(Error::Validation(
            "dataset has missing cells; impute before encoding".into(),
        ));
    }
    let n = d.n_rows();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut covariates = Vec::new();
    let mut warnings = Vec::new();

    for (j, col) in d.schema.columns.iter().enumerate() {
        match col.kind {
            ColumnKind::Continuous => {
                let raw: Vec<f64> = d.rows.iter().map(|r| r[j].number().unwrap()).collect();
                // A constant column is detected exactly; its rounded mean
                // would otherwise leave a spurious tiny variance.
                let constant = raw.iter().all(|&v| v == raw[0]);
                let (mean, std) = if constant {
                    (raw.first().copied().unwrap_or(0.0), 0.0)
                } else {
                    let mean = raw.iter().sum::<f64>() / n as f64;
                    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    (mean, var.sqrt())
                };
                let z = if std > 0.0 {
                    raw.iter().map(|v| (v - mean) / std).collect()
                } else {
                    warnings.push(format!("column `{}` has zero variance; encoded as zeros", col.name));
                    vec![0.0; n]
                };
                let start = columns.len();
                columns.push(z);
                names.push(col.name.clone());
                covariates.push(Covariate {
                    name: col.name.clone(),
                    values: CovariateValues::Continuous(raw),
                    features: start..start + 1,
                    scaling: Some(Scaling { mean, std }),
                });
            }
            ColumnKind::Categorical => {
                let labels: Vec<&str> = d
                    .rows
                    .iter()
                    .map(|r| match &r[j] {
                        Cell::Label(s) => s.as_str(),
                        _ => unreachable!("validated categorical cell"),
                    })
                    .collect();
                let levels: Vec<String> = labels
                    .iter()
                    .copied()
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .map(String::from)
                    .collect();
                let codes: Vec<u32> = labels
                    .iter()
                    .map(|l| levels.binary_search_by(|x| x.as_str().cmp(l)).unwrap() as u32)
                    .collect();
                let start = columns.len();
                for (k, level) in levels.iter().enumerate() {
                    columns.push(codes.iter().map(|&c| if c as usize == k { 1.0 } else { 0.0 }).collect());
                    names.push(format!("{}={}", col.name, level));
                }
                covariates.push(Covariate {
                    name: col.name.clone(),
                    values: CovariateValues::Categorical { codes, levels },
                    features: start..columns.len(),
                    scaling: None,
                });
            }
            ColumnKind::Treatment | ColumnKind::Outcome => {}
        }
    }

    let mut features = Array2::zeros((n, columns.len()));
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    let mut m = DesignMatrix::from_parts(features, names, d.treatment(), d.outcome(), covariates)?;
    m.warnings = warnings;
    Ok(m)
}

/// Row indices of the control (X0) and treated (X1) arms.
pub fn split_by_treatment(m: &DesignMatrix) -> Result<(Vec<usize>, Vec<usize>)> {
    split_labels(m.treatment())
}

pub(crate) fn split_labels(treatment: &[bool]) -> Result<(Vec<usize>, Vec<usize>)> {
    let (x1, x0): (Vec<usize>, Vec<usize>) = (0..treatment.len()).partition(|&i| treatment[i]);
    if x0.is_empty() {
        return Err(Error::SingleArm { arm: 0 });
    }
    if x1.is_empty() {
        return Err(Error::SingleArm { arm: 1 });
    }
    Ok((x0, x1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> Schema {
        Schema::new(vec![
            ColumnSchema::new("age", ColumnKind::Continuous),
            ColumnSchema::new("sex", ColumnKind::Categorical),
            ColumnSchema::new("t", ColumnKind::Treatment),
            ColumnSchema::new("y", ColumnKind::Outcome),
        ])
        .unwrap()
    }

    #[test]
    fn loads_complete_csv() {
        let csv = "age,sex,t,y\n1,a,0,1.5\n2,b,1,2\n3,a,0,0\n4,b,1,1\n";
        let d = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(d.n_rows(), 4);
        assert_eq!(d.missing_count(), 0);
        assert_eq!(d.treatment(), vec![false, true, false, true]);
    }

    #[test]
    fn flags_single_missing_cell() {
        let csv = "age,sex,t,y\n1,a,0,1.5\n,b,1,2\n3,a,0,0\n";
        let d = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(d.missing_count(), 1);
        assert!(d.rows()[1][0].is_missing());
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let csv = "age,sex,t,y\n1,a,2,1.5\n";
        assert!(matches!(read_csv(csv.as_bytes(), &schema()), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_missing_column() {
        let csv = "age,t,y\n1,0,1.5\n";
        assert!(matches!(read_csv(csv.as_bytes(), &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn schema_needs_one_treatment_and_unique_names() {
        assert!(Schema::from_json_str(r#"{"a":"continuous","y":"outcome"}"#).is_err());
        assert!(Schema::new(vec![
            ColumnSchema::new("a", ColumnKind::Treatment),
            ColumnSchema::new("a", ColumnKind::Outcome),
        ])
        .is_err());
        let s = Schema::from_json_str(r#"{"z":"continuous","t":"treatment","y":"outcome"}"#).unwrap();
        assert_eq!(s.columns()[0].name, "z");
        assert_eq!(Schema::from_json_str(&s.to_json_string()).unwrap(), s);
    }

    #[test]
    fn imputes_mean_and_mode() {
        let csv = "age,sex,t,y\n1,a,0,1\n,a,1,2\n3,b,0,0\n4,,1,1\n";
        let d = impute(&read_csv(csv.as_bytes(), &schema()).unwrap()).unwrap();
        assert_eq!(d.missing_count(), 0);
        assert_eq!(d.rows()[1][0], Cell::Number(8.0 / 3.0));
        assert_eq!(d.rows()[3][1], Cell::Label("a".into()));
    }

    #[test]
    fn impute_mean_of_observed() {
        let s = Schema::from_json_str(r#"{"x":"continuous","t":"treatment","y":"outcome"}"#).unwrap();
        let d = read_csv("x,t,y\n1,0,0\n,1,0\n3,0,0\n".as_bytes(), &s).unwrap();
        let d = impute(&d).unwrap();
        let col: Vec<_> = d.rows().iter().map(|r| r[0].clone()).collect();
        assert_eq!(col, vec![Cell::Number(1.0), Cell::Number(2.0), Cell::Number(3.0)]);
    }

    #[test]
    fn all_missing_column_is_unimputable() {
        let csv = "age,sex,t,y\n,a,0,1\n,b,1,2\n";
        let d = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert!(matches!(impute(&d), Err(Error::Unimputable(c)) if c == "age"));
    }

    #[test]
    fn encodes_zscore_and_one_hot() {
        let s = Schema::from_json_str(
            r#"{"x":"continuous","c":"categorical","k":"continuous","t":"treatment","y":"outcome"}"#,
        )
        .unwrap();
        let d = read_csv("x,c,k,t,y\n0,a,5,0,0\n2,b,5,1,1\n".as_bytes(), &s).unwrap();
        let m = encode(&d).unwrap();
        assert_eq!(m.feature_names(), &["x", "c=a", "c=b", "k"]);
        let f = m.features();
        assert_eq!((f[[0, 0]], f[[1, 0]]), (-1.0, 1.0));
        assert_eq!((f[[0, 1]], f[[0, 2]]), (1.0, 0.0));
        assert_eq!((f[[0, 3]], f[[1, 3]]), (0.0, 0.0));
        assert_eq!(m.warnings().len(), 1);
        assert_eq!(m.unstandardize(2).unwrap(), vec![5.0, 5.0]);
    }

    #[test]
    fn encode_requires_imputed_data() {
        let csv = "age,sex,t,y\n,a,0,1\n2,b,1,2\n";
        let d = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert!(encode(&d).is_err());
    }

    #[test]
    fn splits_arms() {
        let m = DesignMatrix::from_continuous(
            &["x".into()],
            &[vec![0.0; 4]],
            vec![false, true, false, true],
            vec![0.0; 4],
        )
        .unwrap();
        assert_eq!(split_by_treatment(&m).unwrap(), (vec![0, 2], vec![1, 3]));
        let (x0, x1) = split_labels(&[false, false, true]).unwrap();
        assert_eq!((x0.len(), x1.len()), (2, 1));
        assert!(matches!(split_labels(&[true, true]), Err(Error::SingleArm { arm: 0 })));
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (3usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::option::of(-50.0f64..50.0), n),
                proptest::collection::vec(proptest::option::of(0u8..3), n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_filter("observed values", |(x, c, _)| {
                    x.iter().any(Option::is_some) && c.iter().any(Option::is_some)
                })
                .prop_map(|(x, c, t)| {
                    let rows = x
                        .into_iter()
                        .zip(c)
                        .zip(t)
                        .map(|((x, c), t)| {
                            vec![
                                x.map_or(Cell::Missing, Cell::Number),
                                c.map_or(Cell::Missing, |c| Cell::Label(format!("l{c}"))),
                                Cell::Number(if t { 1.0 } else { 0.0 }),
                                Cell::Number(0.0),
                            ]
                        })
                        .collect();
                    Dataset::new(schema(), rows).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn impute_is_idempotent(d in arb_dataset()) {
            let once = impute(&d).unwrap();
            prop_assert_eq!(impute(&once).unwrap(), once);
        }

        #[test]
        fn encode_roundtrips_and_standardizes(d in arb_dataset()) {
            let d = impute(&d).unwrap();
            let m = encode(&d).unwrap();
            let raw: Vec<f64> = d.rows().iter().map(|r| r[0].number().unwrap()).collect();
            let back = m.unstandardize(0).unwrap();
            for (a, b) in raw.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            }
            let col = m.features().column(0);
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let sd = m.covariates()[0].scaling.unwrap().std;
            if sd > 1e-6 {
                prop_assert!((var - 1.0).abs() < 1e-9);
            }
            let block = m.covariates()[1].features.clone();
            for row in m.features().rows() {
                let s: f64 = row.slice(ndarray::s![block.clone()]).sum();
                prop_assert_eq!(s, 1.0);
            }
        }

        #[test]
        fn split_partitions_rows(t in proptest::collection::vec(any::<bool>(), 2..40)) {
            prop_assume!(t.iter().any(|&x| x) && t.iter().any(|&x| !x));
            let (x0, x1) = split_labels(&t).unwrap();
            prop_assert_eq!(x0.len() + x1.len(), t.len());
            let mut all: Vec<usize> = x0.iter().chain(&x1).copied().collect();
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), t.len());
        }
    }
}
