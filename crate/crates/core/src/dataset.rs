//! DMU data model, CSV ingestion, min-max normalization and summary statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("non-numeric cell at row {row}, column '{col}': {value:?}")]
    NonNumericCell { row: usize, col: String, value: String },
    #[error("negative or non-finite value at row {row}, column '{col}'")]
    NegativeValue { row: usize, col: String },
    #[error("empty price cell at row {row}, column '{col}' and no fallback configured")]
    MissingPrice { row: usize, col: String },
    #[error("non-positive price at row {row}, column '{col}'")]
    NonPositivePrice { row: usize, col: String },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("at least {needed} DMUs required, got {got}")]
    TooFewDmus { needed: usize, got: usize },
    #[error("column {col} of {role} is constant; min-max normalization undefined")]
    ConstantColumn { role: Role, col: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Dense row-major matrix; rows are DMUs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DatasetError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(DatasetError::DimensionMismatch(format!(
                "row {i} has {} columns, expected {cols}",
                rows[i].len()
            )));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn from_column(col: &[f64]) -> Self {
        Self { rows: col.len(), cols: 1, data: col.to_vec() }
    }

    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self, DatasetError> {
        let rows = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != rows) {
            return Err(DatasetError::DimensionMismatch("columns of unequal length".into()));
        }
        let mut m = Self::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Rows reordered so that row `k` of the result is row `perm[k]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in perm {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: perm.len(), cols: self.cols, data }
    }

    pub fn map_columns(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Self {
        let cols: Vec<Vec<f64>> = (0..self.cols).map(|j| f(j, &self.column(j))).collect();
        let mut m = Self::zeros(self.rows, self.cols);
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "xN")]
    NonEmissionInput,
    #[serde(rename = "xP")]
    EmissionInput,
    #[serde(rename = "y")]
    Desirable,
    #[serde(rename = "b")]
    Undesirable,
    #[serde(rename = "p")]
    OutputPrice,
    #[serde(rename = "w")]
    InputPrice,
    #[serde(rename = "u")]
    EmissionFactor,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::NonEmissionInput => "xN",
            Role::EmissionInput => "xP",
            Role::Desirable => "y",
            Role::Undesirable => "b",
            Role::OutputPrice => "p",
            Role::InputPrice => "w",
            Role::EmissionFactor => "u",
        })
    }
}

/// Inputs and outputs of `I` decision-making units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dmu_ids: Vec<String>,
    pub x_n: Matrix,
    pub x_p: Matrix,
    pub y: Matrix,
    pub b: Matrix,
    /// Header names per role, for reporting.
    #[serde(default)]
    pub labels: BTreeMap<Role, Vec<String>>,
    /// Opaque unit labels keyed by header name.
    #[serde(default)]
    pub units: BTreeMap<String, String>,
}

impl Dataset {
    /// Builds and validates a dataset; DMU ids default to `1..=I`.
    pub fn new(x_n: Matrix, x_p: Matrix, y: Matrix, b: Matrix) -> Result<Self, DatasetError> {
        let n = y.rows();
        let ds = Self {
            dmu_ids: (1..=n).map(|i| i.to_string()).collect(),
            x_n,
            x_p,
            y,
            b,
            labels: BTreeMap::new(),
            units: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_dmu(&self) -> usize {
        self.y.rows()
    }

    pub fn dims(&self) -> Dims {
        Dims { m1: self.x_n.cols(), m2: self.x_p.cols(), j: self.y.cols(), k: self.b.cols() }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.n_dmu();
        if n == 0 {
            return Err(DatasetError::EmptyDataset);
        }
        if self.dmu_ids.len() != n {
            return Err(DatasetError::DimensionMismatch(format!("{} ids for {n} DMUs", self.dmu_ids.len())));
        }
        for (role, m) in self.blocks() {
            if m.rows() != n {
                return Err(DatasetError::DimensionMismatch(format!("{role} has {} rows, expected {n}", m.rows())));
            }
            for i in 0..n {
                for j in 0..m.cols() {
                    let v = m[(i, j)];
                    if !v.is_finite() || v < 0.0 {
                        return Err(DatasetError::NegativeValue { row: i, col: self.label(role, j) });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn require_min_dmus(&self, needed: usize) -> Result<(), DatasetError> {
        if self.n_dmu() < needed {
            return Err(DatasetError::TooFewDmus { needed, got: self.n_dmu() });
        }
        Ok(())
    }

    fn blocks(&self) -> [(Role, &Matrix); 4] {
        [
            (Role::NonEmissionInput, &self.x_n),
            (Role::EmissionInput, &self.x_p),
            (Role::Desirable, &self.y),
            (Role::Undesirable, &self.b),
        ]
    }

    pub fn label(&self, role: Role, col: usize) -> String {
        self.labels.get(&role).and_then(|l| l.get(col).cloned()).unwrap_or_else(|| format!("{role}{}", col + 1))
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        Self {
            dmu_ids: perm.iter().map(|&i| self.dmu_ids[i].clone()).collect(),
            x_n: self.x_n.permute_rows(perm),
            x_p: self.x_p.permute_rows(perm),
            y: self.y.permute_rows(perm),
            b: self.b.permute_rows(perm),
            labels: self.labels.clone(),
            units: self.units.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    pub m1: usize,
    pub m2: usize,
    pub j: usize,
    pub k: usize,
}

/// Market prices per DMU: `p` for desirable outputs [I×J], `w` for
/// emission-generating inputs [I×M2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    pub p: Matrix,
    pub w: Matrix,
}

impl Prices {
    /// Same prices for every DMU.
    pub fn uniform(n: usize, p: &[f64], w: &[f64]) -> Self {
        Self {
            p: Matrix::from_rows(&vec![p.to_vec(); n]).expect("uniform rows"),
            w: Matrix::from_rows(&vec![w.to_vec(); n]).expect("uniform rows"),
        }
    }
}

/// Emission factors of the emission-generating inputs, per DMU [I×M2], and
/// the recuperation factor of desirable outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionFactors {
    pub u: Matrix,
    pub r: f64,
}

impl EmissionFactors {
    pub fn uniform(n: usize, u: &[f64]) -> Self {
        Self { u: Matrix::from_rows(&vec![u.to_vec(); n]).expect("uniform rows"), r: 0.0 }
    }

    /// Emissions per unit of the first emission-generating input, per DMU.
    /// With several emission inputs the same ratio is used for each.
    pub fn from_ratio(d: &Dataset) -> Self {
        let m2 = d.x_p.cols();
        let rows: Vec<Vec<f64>> = (0..d.n_dmu())
            .map(|i| {
                let b: f64 = d.b.row(i).iter().sum();
                let x = d.x_p[(i, 0)];
                let ratio = if x > 0.0 { b / x } else { 0.0 };
                vec![ratio; m2]
            })
            .collect();
        Self { u: Matrix::from_rows(&rows).expect("ratio rows"), r: 0.0 }
    }

    /// Pooled ratio `sum(b) / sum(xP)` applied to every DMU.
    pub fn pooled_ratio(d: &Dataset) -> Self {
        let b: f64 = (0..d.n_dmu()).map(|i| d.b.row(i).iter().sum::<f64>()).sum();
        let x: f64 = d.x_p.column(0).iter().sum();
        let ratio = if x > 0.0 { b / x } else { 0.0 };
        Self::uniform(d.n_dmu(), &vec![ratio; d.x_p.cols()])
    }
}

/// How emission factors are obtained when the CSV has no `u` column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmissionFactorSource {
    /// `u_i = b_i / xP_i` per DMU.
    #[default]
    DmuRatio,
    /// `u = sum(b) / sum(xP)` for every DMU.
    PooledRatio,
    Constant(f64),
}

impl EmissionFactorSource {
    pub fn resolve(&self, d: &Dataset) -> EmissionFactors {
        match *self {
            Self::DmuRatio => EmissionFactors::from_ratio(d),
            Self::PooledRatio => EmissionFactors::pooled_ratio(d),
            Self::Constant(u) => EmissionFactors::uniform(d.n_dmu(), &vec![u; d.x_p.cols()]),
        }
    }
}

/// JSON schema mapping CSV headers to roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Schema {
    #[serde(default)]
    pub dmu_id: Option<String>,
    #[serde(rename = "xN", default)]
    pub x_n: Vec<String>,
    #[serde(rename = "xP")]
    pub x_p: Vec<String>,
    pub y: Vec<String>,
    pub b: Vec<String>,
    #[serde(default)]
    pub p: Vec<String>,
    #[serde(default)]
    pub w: Vec<String>,
    #[serde(default)]
    pub u: Vec<String>,
    /// Scalar fallbacks for empty price cells, keyed by header name.
    #[serde(default)]
    pub fallback: BTreeMap<String, f64>,
    #[serde(default)]
    pub units: BTreeMap<String, String>,
    #[serde(default)]
    pub u_source: EmissionFactorSource,
}

impl Schema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let mut s = String::new();
        File::open(path)?.read_to_string(&mut s)?;
        serde_json::from_str(&s).map_err(|e| DatasetError::Schema(e.to_string()))
    }

    fn check(&self) -> Result<(), DatasetError> {
        for (role, cols) in [("xP", &self.x_p), ("y", &self.y), ("b", &self.b)] {
            if cols.is_empty() {
                return Err(DatasetError::Schema(format!("role {role} needs at least one column")));
            }
        }
        if !self.u.is_empty() && self.u.len() != self.x_p.len() {
            return Err(DatasetError::Schema("u needs one column per xP column".into()));
        }
        Ok(())
    }
}

/// Everything read from one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub dataset: Dataset,
    /// Absent when the schema maps no price columns.
    pub prices: Option<Prices>,
    pub factors: EmissionFactors,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<LoadedData, DatasetError> {
    read_csv(File::open(path)?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<LoadedData, DatasetError> {
    schema.check()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let idx = |cols: &[String]| cols.iter().map(|c| find(c)).collect::<Result<Vec<_>, _>>();
    let id_col = schema.dmu_id.as_deref().map(find).transpose()?;
    let (ixn, ixp, iy, ib) = (idx(&schema.x_n)?, idx(&schema.x_p)?, idx(&schema.y)?, idx(&schema.b)?);
    let (ip, iw, iu) = (idx(&schema.p)?, idx(&schema.w)?, idx(&schema.u)?);

    let mut ids = Vec::new();
    let mut blocks: [Vec<Vec<f64>>; 7] = Default::default();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ids.push(match id_col {
            Some(c) => rec.get(c).unwrap_or_default().to_string(),
            None => (row + 1).to_string(),
        });
        let quantity = |cols: &[usize]| -> Result<Vec<f64>, DatasetError> {
            cols.iter()
                .map(|&c| {
                    let v = parse_cell(rec.get(c).unwrap_or_default(), row, &headers[c])?.ok_or_else(|| {
                        DatasetError::NonNumericCell { row, col: headers[c].clone(), value: String::new() }
                    })?;
                    if !v.is_finite() || v < 0.0 {
                        return Err(DatasetError::NegativeValue { row, col: headers[c].clone() });
                    }
                    Ok(v)
                })
                .collect()
        };
        let price = |cols: &[usize]| -> Result<Vec<f64>, DatasetError> {
            cols.iter()
                .map(|&c| {
                    let name = &headers[c];
                    let v = match parse_cell(rec.get(c).unwrap_or_default(), row, name)? {
                        Some(v) => v,
                        None => *schema
                            .fallback
                            .get(name)
                            .ok_or_else(|| DatasetError::MissingPrice { row, col: name.clone() })?,
                    };
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(DatasetError::NonPositivePrice { row, col: name.clone() });
                    }
                    Ok(v)
                })
                .collect()
        };
        blocks[0].push(quantity(&ixn)?);
        blocks[1].push(quantity(&ixp)?);
        blocks[2].push(quantity(&iy)?);
        blocks[3].push(quantity(&ib)?);
        blocks[4].push(price(&ip)?);
        blocks[5].push(price(&iw)?);
        blocks[6].push(quantity(&iu)?);
    }
    if ids.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = ids.len();
    let mat = |rows: &Vec<Vec<f64>>, cols: usize| {
        if cols == 0 {
            Ok(Matrix::zeros(n, 0))
        } else {
            Matrix::from_rows(rows)
        }
    };
    let mut labels = BTreeMap::new();
    labels.insert(Role::NonEmissionInput, schema.x_n.clone());
    labels.insert(Role::EmissionInput, schema.x_p.clone());
    labels.insert(Role::Desirable, schema.y.clone());
    labels.insert(Role::Undesirable, schema.b.clone());
    let dataset = Dataset {
        dmu_ids: ids,
        x_n: mat(&blocks[0], ixn.len())?,
        x_p: mat(&blocks[1], ixp.len())?,
        y: mat(&blocks[2], iy.len())?,
        b: mat(&blocks[3], ib.len())?,
        labels,
        units: schema.units.clone(),
    };
    dataset.validate()?;
    let prices = if ip.is_empty() && iw.is_empty() {
        None
    } else {
        if ip.len() != dataset.y.cols() || iw.len() != dataset.x_p.cols() {
            return Err(DatasetError::Schema("p needs one column per y column and w one per xP column".into()));
        }
        Some(Prices { p: mat(&blocks[4], ip.len())?, w: mat(&blocks[5], iw.len())? })
    };
    let factors = if iu.is_empty() {
        schema.u_source.resolve(&dataset)
    } else {
        EmissionFactors { u: mat(&blocks[6], iu.len())?, r: 0.0 }
    };
    Ok(LoadedData { dataset, prices, factors })
}

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<Option<f64>, DatasetError> {
    let s = raw.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| DatasetError::NonNumericCell {
        row,
        col: col.to_string(),
        value: s.to_string(),
    })
}

/// Writes the data back in the layout described by `schema` (the inverse of
/// [`read_csv`] for schemas that map every column).
pub fn write_csv<W: Write>(writer: W, data: &LoadedData, schema: &Schema) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = Vec::new();
    if let Some(id) = &schema.dmu_id {
        header.push(id.clone());
    }
    for cols in [&schema.x_n, &schema.x_p, &schema.y, &schema.b, &schema.p, &schema.w, &schema.u] {
        header.extend(cols.iter().cloned());
    }
    w.write_record(&header)?;
    let d = &data.dataset;
    for i in 0..d.n_dmu() {
        let mut rec: Vec<String> = Vec::new();
        if schema.dmu_id.is_some() {
            rec.push(d.dmu_ids[i].clone());
        }
        let mut push = |m: &Matrix| rec.extend(m.row(i).iter().map(|v| format!("{v:?}")));
        push(&d.x_n);
        push(&d.x_p);
        push(&d.y);
        push(&d.b);
        if let Some(pr) = &data.prices {
            if !schema.p.is_empty() {
                push(&pr.p);
            }
            if !schema.w.is_empty() {
                push(&pr.w);
            }
        }
        if !schema.u.is_empty() {
            push(&data.factors.u);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Min-max normalized emission inputs and outputs; every column spans [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedDataset {
    pub x_p: Matrix,
    pub y: Matrix,
    pub b: Matrix,
}

impl NormalizedDataset {
    pub fn n_dmu(&self) -> usize {
        self.y.rows()
    }
}

pub fn normalize(d: &Dataset) -> Result<NormalizedDataset, DatasetError> {
    d.require_min_dmus(2)?;
    Ok(NormalizedDataset {
        x_p: min_max(&d.x_p, Role::EmissionInput)?,
        y: min_max(&d.y, Role::Desirable)?,
        b: min_max(&d.b, Role::Undesirable)?,
    })
}

fn min_max(m: &Matrix, role: Role) -> Result<Matrix, DatasetError> {
    for j in 0..m.cols() {
        let (lo, hi) = extent(&m.column(j));
        if hi <= lo {
            return Err(DatasetError::ConstantColumn { role, col: j });
        }
    }
    Ok(m.map_columns(|_, col| {
        let (lo, hi) = extent(col);
        col.iter().map(|v| (v - lo) / (hi - lo)).collect()
    }))
}

fn extent(col: &[f64]) -> (f64, f64) {
    col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStats {
    pub role: String,
    pub name: String,
    pub unit: String,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single row.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn column_stats(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let (min, max) = extent(values);
    (mean, std, min, max)
}

/// Mean / std / min / max for every quantity column (and price columns when given).
pub fn summary_stats(d: &Dataset, prices: Option<&Prices>) -> Vec<ColumnStats> {
    let mut out = Vec::new();
    let mut add = |role: Role, m: &Matrix, name: String| {
        for j in 0..m.cols() {
            let (mean, std, min, max) = column_stats(&m.column(j));
            let name = if m.cols() > 1 || name.is_empty() { d.label(role, j) } else { name.clone() };
            let unit = d.units.get(&name).cloned().unwrap_or_default();
            out.push(ColumnStats { role: role.to_string(), name, unit, mean, std, min, max });
        }
    };
    add(Role::Desirable, &d.y, String::new());
    add(Role::Undesirable, &d.b, String::new());
    add(Role::EmissionInput, &d.x_p, String::new());
    add(Role::NonEmissionInput, &d.x_n, String::new());
    if let Some(pr) = prices {
        add(Role::OutputPrice, &pr.p, "p".into());
        add(Role::InputPrice, &pr.w, "w".into());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one_col(v: &[f64]) -> Dataset {
        Dataset::new(Matrix::zeros(v.len(), 0), Matrix::from_column(v), Matrix::from_column(v), Matrix::from_column(v))
            .unwrap()
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let nd = normalize(&one_col(&[5.0, 10.0, 15.0])).unwrap();
        assert_eq!(nd.y.column(0), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_uneven_column() {
        let nd = normalize(&one_col(&[2.0, 4.0, 8.0])).unwrap();
        assert_abs_diff_eq!(nd.b[(1, 0)], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_column_is_rejected() {
        let err = normalize(&one_col(&[3.0, 3.0, 3.0])).unwrap_err();
        assert!(matches!(err, DatasetError::ConstantColumn { role: Role::EmissionInput, col: 0 }));
    }

    #[test]
    fn normalize_needs_two_rows() {
        assert!(matches!(normalize(&one_col(&[3.0])), Err(DatasetError::TooFewDmus { .. })));
    }

    #[test]
    fn negative_entries_rejected_on_construction() {
        let r = Dataset::new(
            Matrix::zeros(2, 0),
            Matrix::from_column(&[1.0, -1.0]),
            Matrix::from_column(&[1.0, 1.0]),
            Matrix::from_column(&[1.0, 1.0]),
        );
        assert!(matches!(r, Err(DatasetError::NegativeValue { row: 1, .. })));
    }

    #[test]
    fn stats_of_small_columns() {
        let (mean, std, min, max) = column_stats(&[1.0, 2.0, 3.0]);
        assert_eq!((mean, min, max), (2.0, 1.0, 3.0));
        assert_abs_diff_eq!(std, 1.0, epsilon = 1e-15);
        assert_eq!(column_stats(&[7.5]).1, 0.0);
    }

    fn schema() -> Schema {
        serde_json::from_str(
            r#"{"dmu_id":"plant","xN":["availability","capacity"],"xP":["fuel"],"y":["electricity"],
                "b":["co2"],"p":["p"],"w":["w"],"fallback":{"w":4898.0}}"#,
        )
        .unwrap()
    }

    const CSV: &str = "plant,electricity,co2,fuel,availability,capacity,p,w\n\
                       A,100,10,110,8000,500,1.1,\n\
                       B,200,19,205,8100,900,0.9,5100\n\
                       C,150,16,170,7000,700,1.2,\n";

    #[test]
    fn reads_roles_and_fills_fallback() {
        let data = read_csv(CSV.as_bytes(), &schema()).unwrap();
        let d = &data.dataset;
        assert_eq!(d.n_dmu(), 3);
        assert_eq!(d.dims(), Dims { m1: 2, m2: 1, j: 1, k: 1 });
        assert_eq!(d.dmu_ids, vec!["A", "B", "C"]);
        assert_eq!(d.x_n.row(1), &[8100.0, 900.0]);
        let pr = data.prices.unwrap();
        assert_eq!(pr.w.column(0), vec![4898.0, 5100.0, 4898.0]);
        assert_abs_diff_eq!(data.factors.u[(0, 0)], 10.0 / 110.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_price_column_takes_fallback_everywhere() {
        let csv = "plant,electricity,co2,fuel,availability,capacity,p,w\nA,1,1,1,1,1,1,\nB,2,2,2,2,2,1,\n";
        let data = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert!(data.prices.unwrap().w.column(0).iter().all(|&w| w == 4898.0));
    }

    #[test]
    fn ingestion_errors() {
        let neg = CSV.replace("A,100,10,110", "A,100,10,-110");
        assert!(matches!(read_csv(neg.as_bytes(), &schema()), Err(DatasetError::NegativeValue { row: 0, .. })));

        let text = CSV.replace("B,200", "B,lots");
        assert!(matches!(
            read_csv(text.as_bytes(), &schema()),
            Err(DatasetError::NonNumericCell { row: 1, ref col, .. }) if col == "electricity"
        ));

        let missing = CSV.replace("co2", "carbon");
        assert!(matches!(read_csv(missing.as_bytes(), &schema()), Err(DatasetError::MissingColumn(c)) if c == "co2"));

        let header_only = "plant,electricity,co2,fuel,availability,capacity,p,w\n";
        assert!(matches!(read_csv(header_only.as_bytes(), &schema()), Err(DatasetError::EmptyDataset)));

        let mut no_fallback = schema();
        no_fallback.fallback.clear();
        assert!(matches!(read_csv(CSV.as_bytes(), &no_fallback), Err(DatasetError::MissingPrice { row: 0, .. })));
    }

    #[test]
    fn write_back_round_trip() {
        let data = read_csv(CSV.as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &data, &schema()).unwrap();
        let again = read_csv(buf.as_slice(), &schema()).unwrap();
        assert_eq!(again, data);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(col in prop::collection::vec(0.0f64..1e5, 2..30)) {
            prop_assume!(col.iter().cloned().fold(f64::MIN, f64::max) > col.iter().cloned().fold(f64::MAX, f64::min) + 1e-6);
            let once = normalize(&one_col(&col)).unwrap();
            let twice = normalize(&one_col(&once.y.column(0))).unwrap();
            for (a, b) in once.y.column(0).iter().zip(twice.y.column(0)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn normalization_ignores_positive_affine_maps(
            col in prop::collection::vec(0.0f64..100.0, 2..30),
            scale in 0.01f64..1e3,
            shift in 0.0f64..1e3,
        ) {
            prop_assume!(col.iter().cloned().fold(f64::MIN, f64::max) > col.iter().cloned().fold(f64::MAX, f64::min) + 1e-3);
            let moved: Vec<f64> = col.iter().map(|v| scale * v + shift).collect();
            let a = normalize(&one_col(&col)).unwrap();
            let b = normalize(&one_col(&moved)).unwrap();
            for (x, y) in a.x_p.column(0).iter().zip(b.x_p.column(0)) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn every_normalized_column_spans_unit_interval(col in prop::collection::vec(0.0f64..1e4, 2..30)) {
            prop_assume!(col.iter().cloned().fold(f64::MIN, f64::max) > col.iter().cloned().fold(f64::MAX, f64::min) + 1e-6);
            let nd = normalize(&one_col(&col)).unwrap();
            let c = nd.y.column(0);
            prop_assert_eq!(c.iter().cloned().fold(f64::MAX, f64::min), 0.0);
            prop_assert_eq!(c.iter().cloned().fold(f64::MIN, f64::max), 1.0);
        }
    }
}
