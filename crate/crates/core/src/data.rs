//! Datasets: the synthetic frequency-severity generator, CSV ingestion with a
//! TOML schema, one-hot / min-max preprocessing and train/test splitting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{CountFamily, SeverityFamily, SeverityKind};
use crate::error::{Error, Result};
use crate::moments::aggregate_mean;

/// One policy: encoded covariates, claim count, exposure and average severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub x: Vec<f64>,
    pub n: u64,
    pub t: f64,
    pub ybar: f64,
}

impl DatasetRecord {
    pub fn new(x: Vec<f64>, n: u64, t: f64, ybar: f64) -> Result<Self> {
        let r = Self { x, n, t, ybar };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::Data(format!("exposure must be positive, got {}", self.t)));
        }
        if self.n == 0 && self.ybar != 0.0 {
            return Err(Error::Data(format!(
                "average severity {} recorded without claims",
                self.ybar
            )));
        }
        if !self.ybar.is_finite() || self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite covariate or severity".into()));
        }
        Ok(())
    }

    /// Aggregate loss `n · ȳ`.
    pub fn aggregate_loss(&self) -> f64 {
        self.n as f64 * self.ybar
    }
}

/// Encoded columns that belong to one original variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    /// Builds a dataset whose groups are inferred from the column names:
    /// columns called `Var=level` share the group `Var`.
    pub fn new(feature_names: Vec<String>, records: Vec<DatasetRecord>) -> Result<Self> {
        let groups = infer_groups(&feature_names);
        Self::with_groups(feature_names, groups, records)
    }

    pub fn with_groups(
        feature_names: Vec<String>,
        groups: Vec<FeatureGroup>,
        records: Vec<DatasetRecord>,
    ) -> Result<Self> {
        let dim = feature_names.len();
        for (i, r) in records.iter().enumerate() {
            if r.x.len() != dim {
                return Err(Error::Shape(format!(
                    "record {i} has {} covariates, expected {dim}",
                    r.x.len()
                )));
            }
        }
        let mut seen = vec![false; dim];
        for g in &groups {
            for &c in &g.columns {
                if c >= dim || std::mem::replace(&mut seen[c], true) {
                    return Err(Error::Shape(format!("feature group {} is malformed", g.name)));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Shape("feature groups do not cover every column".into()));
        }
        Ok(Self {
            feature_names,
            groups,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn x_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), self.dim()));
        for (mut row, r) in m.rows_mut().into_iter().zip(&self.records) {
            row.assign(&ndarray::ArrayView1::from(&r.x[..]));
        }
        m
    }

    fn derive(&self, records: Vec<DatasetRecord>) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            groups: self.groups.clone(),
            records,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        self.derive(indices.iter().map(|&i| self.records[i].clone()).collect())
    }

    /// Records with at least one claim.
    pub fn with_claims(&self) -> Self {
        self.derive(self.records.iter().filter(|r| r.n > 0).cloned().collect())
    }

    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let (train, test) = train_test_split(&self.records, test_fraction, seed)?;
        Ok((self.derive(train), self.derive(test)))
    }
}

fn infer_groups(names: &[String]) -> Vec<FeatureGroup> {
    let mut groups: Vec<FeatureGroup> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let base = name.split_once('=').map_or(name.as_str(), |(b, _)| b);
        match groups.last_mut() {
            Some(g) if name.contains('=') && g.name == base => g.columns.push(i),
            _ => groups.push(FeatureGroup {
                name: base.to_string(),
                columns: vec![i],
            }),
        }
    }
    groups
}

/// Seeded permutation split. The test part gets `round(len · test_fraction)` items.
pub fn train_test_split<T: Clone>(items: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::domain(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (items.len() as f64 * test_fraction).round() as usize;
    let (test_idx, train_idx) = order.split_at(n_test);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(train_idx), pick(test_idx)))
}

// ---------------------------------------------------------------------------
// Synthetic data

pub const SIM_PI: f64 = 0.2;
pub const SIM_GAMMA: f64 = 0.5;
pub const SIM_PHI: f64 = 1.0;

/// `F(x) = (x₁ − ½)² + (x₂ − ½)²`
pub fn sim_f(x: [f64; 2]) -> f64 {
    (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)
}

/// `S(x) = x₁² + x₂²`
pub fn sim_s(x: [f64; 2]) -> f64 {
    x[0] * x[0] + x[1] * x[1]
}

pub fn sim_count_family() -> CountFamily {
    CountFamily::Zip { pi: SIM_PI }
}

pub fn sim_severity_family() -> SeverityFamily {
    SeverityFamily {
        kind: SeverityKind::Gamma,
        dispersion: SIM_PHI,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueFunctions {
    pub f: f64,
    pub s: f64,
    /// `E[S | x]` for unit exposure.
    pub aggregate_mean: f64,
}

pub fn true_functions(x: [f64; 2]) -> TrueFunctions {
    let (f, s) = (sim_f(x), sim_s(x));
    let aggregate_mean = aggregate_mean(&sim_count_family(), f.exp(), s, SIM_GAMMA)
        .expect("generator parameters are in range");
    TrueFunctions { f, s, aggregate_mean }
}

/// Draws `(n, ȳ)` at covariates `x` with unit exposure.
pub fn simulate_at<R: Rng + ?Sized>(x: [f64; 2], rng: &mut R) -> Result<(u64, f64)> {
    let n = sim_count_family().sample(sim_f(x).exp(), rng)?;
    if n == 0 {
        return Ok((0, 0.0));
    }
    let mu = (sim_s(x) + SIM_GAMMA * n as f64).exp();
    Ok((n, sim_severity_family().sample_average(mu, n, rng)?))
}

/// `m` records with covariates uniform on `{0, 0.1, …, 1}²` and unit exposure.
pub fn generate_synthetic(m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::domain("need at least one record"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(m);
    for _ in 0..m {
        let x = [
            rng.random_range(0..=10u32) as f64 / 10.0,
            rng.random_range(0..=10u32) as f64 / 10.0,
        ];
        let (n, ybar) = simulate_at(x, &mut rng)?;
        records.push(DatasetRecord {
            x: x.to_vec(),
            n,
            t: 1.0,
            ybar,
        });
    }
    Dataset::new(vec!["x1".into(), "x2".into()], records)
}

// ---------------------------------------------------------------------------
// CSV I/O for encoded datasets

/// Writes `feature columns…, n, t, ybar` with shortest round-trip float formatting.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    header.extend(["n", "t", "ybar"]);
    w.write_record(&header)?;
    for r in &dataset.records {
        let mut row: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
        row.extend([r.n.to_string(), r.t.to_string(), r.ybar.to_string()]);
        w.write_record(&row)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a file written by [`write_dataset_csv`].
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let k = header.len();
    if k < 3 || header[k - 3..] != ["n", "t", "ybar"] {
        return Err(Error::Schema("dataset file must end with columns n,t,ybar".into()));
    }
    let features = header[..k - 3].to_vec();
    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| -> Result<f64> {
            rec.get(c)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Cell {
                    row: row + 1,
                    column: header[c].clone(),
                    message: e.to_string(),
                })
        };
        let x = (0..k - 3).map(cell).collect::<Result<Vec<_>>>()?;
        let n = parse_count(rec.get(k - 3).unwrap_or(""), row + 1, "n")?;
        let r = DatasetRecord {
            x,
            n,
            t: cell(k - 2)?,
            ybar: cell(k - 1)?,
        };
        r.validate().map_err(|e| Error::Cell {
            row: row + 1,
            column: "n/t/ybar".into(),
            message: e.to_string(),
        })?;
        records.push(r);
    }
    Dataset::new(features, records)
}

fn parse_count(text: &str, row: usize, column: &str) -> Result<u64> {
    let text = text.trim();
    let v: f64 = text.parse().map_err(|e: std::num::ParseFloatError| Error::Cell {
        row,
        column: column.into(),
        message: e.to_string(),
    })?;
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Cell {
            row,
            column: column.into(),
            message: format!("claim count must be a non-negative integer, got {text}"),
        });
    }
    Ok(v as u64)
}

// ---------------------------------------------------------------------------
// Raw tables and preprocessing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Take the natural log before min-max scaling (numeric only).
    #[serde(default)]
    pub log: bool,
}

/// Sidecar description of a claims CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub count: String,
    pub exposure: String,
    /// Average severity column.
    pub severity: String,
    pub covariates: Vec<ColumnSpec>,
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Self = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Schema("no covariates listed".into()));
        }
        let mut names: Vec<&str> = vec![&self.count, &self.exposure, &self.severity];
        names.extend(self.covariates.iter().map(|c| c.name.as_str()));
        let mut sorted = names.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Schema(format!("column {} listed twice", w[0])));
        }
        if let Some(c) = self
            .covariates
            .iter()
            .find(|c| c.log && c.kind == ColumnKind::Categorical)
        {
            return Err(Error::Schema(format!("log transform on categorical column {}", c.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Number(f64),
    Category(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    /// Line in the source file (header is line 1).
    pub line: usize,
    pub covariates: Vec<RawValue>,
    pub n: u64,
    pub t: f64,
    pub ybar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: Schema,
    pub rows: Vec<RawRow>,
    /// Rows skipped because a field was empty or `NA`.
    pub dropped_missing: usize,
    /// Rows skipped because the exposure was not positive.
    pub rejected_exposure: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

/// Reads a claims CSV described by `schema`.
///
/// The severity may be blank on rows without claims. Other rows with a
/// missing field are dropped and rows with non-positive exposure
/// rejected; both are counted in the returned table. An unparseable number is
/// an error naming its row and column.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    schema.validate()?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column {name} not found in {}", path.display())))
    };
    let count_col = find(&schema.count)?;
    let exposure_col = find(&schema.exposure)?;
    let severity_col = find(&schema.severity)?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let (mut dropped_missing, mut rejected_exposure) = (0, 0);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let claimless = rec
            .get(count_col)
            .and_then(|c| c.trim().parse::<f64>().ok())
            .is_some_and(|n| n == 0.0);
        let needed = [count_col, exposure_col]
            .into_iter()
            .chain((!claimless).then_some(severity_col))
            .chain(cov_cols.iter().copied());
        if needed.clone().any(|c| rec.get(c).is_none_or(is_missing)) {
            dropped_missing += 1;
            continue;
        }
        let number = |c: usize| -> Result<f64> {
            let text = rec.get(c).unwrap_or("").trim();
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Cell {
                    row: line,
                    column: header[c].clone(),
                    message: format!("cannot parse `{text}` as a number"),
                })
        };
        let t = number(exposure_col)?;
        if t <= 0.0 {
            rejected_exposure += 1;
            continue;
        }
        let n = parse_count(rec.get(count_col).unwrap_or(""), line, &header[count_col])?;
        let ybar = if n == 0 { 0.0 } else { number(severity_col)? };
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for (spec, &c) in schema.covariates.iter().zip(&cov_cols) {
            covariates.push(match spec.kind {
                ColumnKind::Numeric => RawValue::Number(number(c)?),
                ColumnKind::Categorical => RawValue::Category(rec.get(c).unwrap_or("").trim().to_string()),
            });
        }
        rows.push(RawRow {
            line,
            covariates,
            n,
            t,
            ybar,
        });
    }
    if dropped_missing > 0 {
        log::warn!("{}: dropped {dropped_missing} rows with missing fields", path.display());
    }
    if rejected_exposure > 0 {
        log::warn!(
            "{}: rejected {rejected_exposure} rows with non-positive exposure",
            path.display()
        );
    }
    Ok(RawTable {
        schema: schema.clone(),
        rows,
        dropped_missing,
        rejected_exposure,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnMeta {
    Numeric {
        name: String,
        log: bool,
        min: f64,
        max: f64,
    },
    Categorical {
        name: String,
        categories: Vec<String>,
    },
}

impl ColumnMeta {
    pub fn name(&self) -> &str {
        match self {
            ColumnMeta::Numeric { name, .. } | ColumnMeta::Categorical { name, .. } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            ColumnMeta::Numeric { .. } => 1,
            ColumnMeta::Categorical { categories, .. } => categories.len(),
        }
    }

    /// Scales a raw numeric value to `[0, 1]` over the fitted range.
    pub fn scale(&self, value: f64) -> Result<f64> {
        let ColumnMeta::Numeric { name, log, min, max } = self else {
            return Err(Error::Schema(format!("{} is not numeric", self.name())));
        };
        let v = if *log {
            if value <= 0.0 {
                return Err(Error::Data(format!("{name}: log of non-positive value {value}")));
            }
            value.ln()
        } else {
            value
        };
        Ok(if max > min { (v - min) / (max - min) } else { 0.0 })
    }

    /// Inverse of [`ColumnMeta::scale`].
    pub fn unscale(&self, scaled: f64) -> Result<f64> {
        let ColumnMeta::Numeric { log, min, max, .. } = self else {
            return Err(Error::Schema(format!("{} is not numeric", self.name())));
        };
        let v = min + scaled * (max - min);
        Ok(if *log { v.exp() } else { v })
    }
}

/// Fitted encoding: per-column ranges and vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocMeta {
    pub columns: Vec<ColumnMeta>,
}

impl PreprocMeta {
    pub fn encoded_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for c in &self.columns {
            match c {
                ColumnMeta::Numeric { name, .. } => names.push(name.clone()),
                ColumnMeta::Categorical { name, categories } => {
                    names.extend(categories.iter().map(|k| format!("{name}={k}")))
                }
            }
        }
        names
    }

    pub fn encoded_dim(&self) -> usize {
        self.columns.iter().map(ColumnMeta::width).sum()
    }

    pub fn groups(&self) -> Vec<FeatureGroup> {
        let mut start = 0;
        self.columns
            .iter()
            .map(|c| {
                let g = FeatureGroup {
                    name: c.name().to_string(),
                    columns: (start..start + c.width()).collect(),
                };
                start += c.width();
                g
            })
            .collect()
    }

    /// Meta that maps an already encoded dataset onto itself: every encoded
    /// column numeric on `[0, 1]` with no log.
    pub fn encoded_identity(&self) -> PreprocMeta {
        PreprocMeta {
            columns: self
                .encoded_names()
                .into_iter()
                .map(|name| ColumnMeta::Numeric {
                    name,
                    log: false,
                    min: 0.0,
                    max: 1.0,
                })
                .collect(),
        }
    }
}

/// Learns min/max (after the optional log) and category vocabularies from `table`.
pub fn fit_preproc(table: &RawTable) -> Result<PreprocMeta> {
    if table.rows.is_empty() {
        return Err(Error::Data("cannot fit preprocessing on an empty table".into()));
    }
    let mut columns = Vec::with_capacity(table.schema.covariates.len());
    for (j, spec) in table.schema.covariates.iter().enumerate() {
        columns.push(match spec.kind {
            ColumnKind::Numeric => {
                let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                for row in &table.rows {
                    let RawValue::Number(v) = row.covariates[j] else {
                        return Err(Error::Schema(format!("{} holds non-numeric values", spec.name)));
                    };
                    let v = if spec.log {
                        if v <= 0.0 {
                            return Err(Error::Cell {
                                row: row.line,
                                column: spec.name.clone(),
                                message: format!("log of non-positive value {v}"),
                            });
                        }
                        v.ln()
                    } else {
                        v
                    };
                    min = min.min(v);
                    max = max.max(v);
                }
                ColumnMeta::Numeric {
                    name: spec.name.clone(),
                    log: spec.log,
                    min,
                    max,
                }
            }
            ColumnKind::Categorical => {
                let mut seen = BTreeMap::new();
                for row in &table.rows {
                    if let RawValue::Category(k) = &row.covariates[j] {
                        seen.insert(k.clone(), ());
                    }
                }
                ColumnMeta::Categorical {
                    name: spec.name.clone(),
                    categories: seen.into_keys().collect(),
                }
            }
        });
    }
    Ok(PreprocMeta { columns })
}

/// Encodes `table` with `meta`. Categories not in the vocabulary encode as an
/// all-zero block and are reported once per column through the log.
pub fn apply_preproc(table: &RawTable, meta: &PreprocMeta) -> Result<Dataset> {
    if table.schema.covariates.len() != meta.columns.len()
        || table
            .schema
            .covariates
            .iter()
            .zip(&meta.columns)
            .any(|(s, m)| s.name != m.name())
    {
        return Err(Error::Schema(
            "table columns do not match the preprocessing metadata".into(),
        ));
    }
    let mut unknown: BTreeMap<&str, usize> = BTreeMap::new();
    let mut records = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let mut x = Vec::with_capacity(meta.encoded_dim());
        for (value, col) in row.covariates.iter().zip(&meta.columns) {
            match (value, col) {
                (RawValue::Number(v), ColumnMeta::Numeric { .. }) => x.push(col.scale(*v).map_err(|e| {
                    Error::Cell {
                        row: row.line,
                        column: col.name().to_string(),
                        message: e.to_string(),
                    }
                })?),
                (RawValue::Category(k), ColumnMeta::Categorical { name, categories }) => {
                    let hit = categories.binary_search(k).ok();
                    if hit.is_none() {
                        *unknown.entry(name).or_default() += 1;
                    }
                    x.extend((0..categories.len()).map(|i| if Some(i) == hit { 1.0 } else { 0.0 }));
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "{} kind differs between table and metadata",
                        col.name()
                    )))
                }
            }
        }
        records.push(DatasetRecord::new(x, row.n, row.t, row.ybar).map_err(|e| Error::Cell {
            row: row.line,
            column: "count/exposure/severity".into(),
            message: e.to_string(),
        })?);
    }
    for (name, count) in unknown {
        log::warn!("{name}: {count} rows with categories unseen at fit time encoded as all zeros");
    }
    Dataset::with_groups(meta.encoded_names(), meta.groups(), records)
}

/// Turns an encoded dataset back into a raw table over its encoded columns, so
/// it can be passed through [`apply_preproc`] again.
pub fn dataset_as_raw(dataset: &Dataset) -> RawTable {
    let schema = Schema {
        count: "n".into(),
        exposure: "t".into(),
        severity: "ybar".into(),
        covariates: dataset
            .feature_names
            .iter()
            .map(|name| ColumnSpec {
                name: name.clone(),
                kind: ColumnKind::Numeric,
                log: false,
            })
            .collect(),
    };
    let rows = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| RawRow {
            line: i + 2,
            covariates: r.x.iter().map(|&v| RawValue::Number(v)).collect(),
            n: r.n,
            t: r.t,
            ybar: r.ybar,
        })
        .collect();
    RawTable {
        schema,
        rows,
        dropped_missing: 0,
        rejected_exposure: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;


    #[test]
    fn generator_truths() {
        assert_eq!(sim_f([0.5, 0.5]).exp(), 1.0);
        assert!((sim_f([0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert_eq!(sim_s([0.0, 0.0]), 0.0);
        assert!((sim_s([0.5, 0.5]) - 0.5).abs() < 1e-15);
        assert!(((sim_s([1.0, 1.0]) + SIM_GAMMA).exp() - 12.182_493_960_703_473).abs() < 1e-12);
        // E[S|x] = (1−π) λ e^{s+γ} e^{λ(e^γ−1)}
        let t = true_functions([0.5, 0.5]);
        let lambda = 1.0;
        let expected = (1.0 - SIM_PI) * lambda * (0.5 + SIM_GAMMA + lambda * SIM_GAMMA.exp_m1()).exp();
        assert!((t.aggregate_mean - expected).abs() < 1e-12);
    }

    #[test]
    fn generator_is_deterministic_and_on_grid() {
        let a = generate_synthetic(500, 3).unwrap();
        let b = generate_synthetic(500, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(500, 4).unwrap());
        for r in &a.records {
            for &v in &r.x {
                assert!((v * 10.0 - (v * 10.0).round()).abs() < 1e-12 && (0.0..=1.0).contains(&v));
            }
            assert_eq!(r.t, 1.0);
            assert_eq!(r.n == 0, r.ybar == 0.0);
        }
        assert!(generate_synthetic(0, 1).is_err());
    }

    #[test]
    fn zero_fraction_matches_grid_average() {
        let data = generate_synthetic(40_000, 11).unwrap();
        let zeros = data.records.iter().filter(|r| r.n == 0).count() as f64 / data.len() as f64;
        let mut avg = 0.0;
        for i in 0..=10 {
            for j in 0..=10 {
                avg += (-sim_f([i as f64 / 10.0, j as f64 / 10.0]).exp()).exp();
            }
        }
        avg /= 121.0;
        let expected = SIM_PI + (1.0 - SIM_PI) * avg;
        assert!((zeros - expected).abs() < 0.01, "{zeros} vs {expected}");
    }

    #[test]
    fn count_mean_at_fixed_point() {
        let x = [0.2, 0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| simulate_at(x, &mut rng).unwrap().0 as f64)
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let expected = (1.0 - SIM_PI) * sim_f(x).exp();
        assert!((mean - expected).abs() < 3.0 * sd / n.sqrt());
    }

    #[test]
    fn severity_increases_with_count() {
        let x = [0.4, 0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        while counts[1..].iter().any(|&c| c < 20_000) {
            let (n, y) = simulate_at(x, &mut rng).unwrap();
            if (1..=3).contains(&n) {
                sums[n as usize] += y;
                counts[n as usize] += 1;
            }
        }
        let means: Vec<f64> = (1..=3).map(|k| sums[k] / counts[k] as f64).collect();
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<u32> = (0..10).collect();
        let (train, test) = train_test_split(&items, 0.3, 1).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        assert_eq!(train_test_split(&items, 0.3, 1).unwrap(), (train.clone(), test.clone()));
        let mut all: Vec<u32> = train.into_iter().chain(test).collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert!(train_test_split(&items, 1.0, 1).is_err());
        assert!(train_test_split(&items, 0.0, 1).is_err());
    }

    const SCHEMA: &str = r#"
count = "ClaimNb"
exposure = "Exposure"
severity = "AvgClaim"

[[covariates]]
name = "Gas"
kind = "categorical"

[[covariates]]
name = "BonusMalus"
kind = "numeric"

[[covariates]]
name = "Density"
kind = "numeric"
log = true
"#;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_ingestion_and_encoding() {
        let csv = "\
ClaimNb,Exposure,AvgClaim,Gas,BonusMalus,Density
0,0.5,0,Diesel,50,100
1,1,1200.5,Regular,350,1000
0,1,,Diesel,100,
2,0.3,800,\"Regular\",75,10
0,0,0,Diesel,60,20
0,0.8,,Diesel,90,50
";
        let file = write_temp(csv);
        let schema = Schema::from_toml(SCHEMA).unwrap();
        let table = load_csv(file.path(), &schema).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.rows[3].ybar, 0.0);
        assert_eq!(table.dropped_missing, 1);
        assert_eq!(table.rejected_exposure, 1);
        let meta = fit_preproc(&table).unwrap();
        assert_eq!(meta.encoded_names(), ["Gas=Diesel", "Gas=Regular", "BonusMalus", "Density"]);
        let data = apply_preproc(&table, &meta).unwrap();
        assert_eq!(data.groups.len(), 3);
        assert_eq!(data.groups[0].columns, [0, 1]);
        assert_eq!(data.records[0].x[..3], [1.0, 0.0, 0.0]);
        assert_eq!(data.records[1].x[..3], [0.0, 1.0, 1.0]);
        assert!((data.records[1].x[3] - 1.0).abs() < 1e-15);
        assert!(data.records[2].x[3].abs() < 1e-15);
        assert!((data.records[0].x[3] - 0.5).abs() < 1e-12);
        assert_eq!(data.records[2].n, 2);
    }

    #[test]
    fn bad_cells_are_reported() {
        let schema = Schema::from_toml(SCHEMA).unwrap();
        let file = write_temp("ClaimNb,Exposure,AvgClaim,Gas,BonusMalus,Density\n0,1,0,Diesel,abc,10\n");
        match load_csv(file.path(), &schema) {
            Err(Error::Cell { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "BonusMalus")),
            other => panic!("{other:?}"),
        }
        let file = write_temp("ClaimNb,Exposure,Gas,BonusMalus,Density\n0,1,Diesel,5,10\n");
        assert!(matches!(load_csv(file.path(), &schema), Err(Error::Schema(_))));
        assert!(Schema::from_toml("count = 1").is_err());
    }

    #[test]
    fn one_hot_and_unknown_category() {
        let schema = Schema {
            count: "n".into(),
            exposure: "t".into(),
            severity: "y".into(),
            covariates: vec![ColumnSpec {
                name: "c".into(),
                kind: ColumnKind::Categorical,
                log: false,
            }],
        };
        let row = |k: &str| RawRow {
            line: 2,
            covariates: vec![RawValue::Category(k.into())],
            n: 0,
            t: 1.0,
            ybar: 0.0,
        };
        let table = RawTable {
            schema,
            rows: vec![row("a"), row("b"), row("c")],
            dropped_missing: 0,
            rejected_exposure: 0,
        };
        let meta = fit_preproc(&table).unwrap();
        let data = apply_preproc(&table, &meta).unwrap();
        assert_eq!(data.records[1].x, [0.0, 1.0, 0.0]);
        let mut other = table.clone();
        other.rows = vec![row("z")];
        assert_eq!(apply_preproc(&other, &meta).unwrap().records[0].x, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn bonus_malus_bounds_scale() {
        let col = ColumnMeta::Numeric {
            name: "BonusMalus".into(),
            log: false,
            min: 50.0,
            max: 350.0,
        };
        assert_eq!(col.scale(50.0).unwrap(), 0.0);
        assert_eq!(col.scale(350.0).unwrap(), 1.0);
    }

    #[test]
    fn encoded_data_is_a_fixed_point() {
        let schema = Schema::from_toml(SCHEMA).unwrap();
        let csv = "ClaimNb,Exposure,AvgClaim,Gas,BonusMalus,Density\n0,1,0,Diesel,50,3\n1,1,7,Regular,90,40\n0,0.2,0,Regular,70,500\n";
        let file = write_temp(csv);
        let table = load_csv(file.path(), &schema).unwrap();
        let meta = fit_preproc(&table).unwrap();
        let once = apply_preproc(&table, &meta).unwrap();
        let twice = apply_preproc(&dataset_as_raw(&once), &meta.encoded_identity()).unwrap();
        assert_eq!(twice.records, once.records);
        assert_eq!(twice.feature_names, once.feature_names);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let data = generate_synthetic(200, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset_csv(&data, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2,n,t,ybar\n"));
        assert_eq!(text.lines().count(), 201);
        assert_eq!(read_dataset_csv(&path).unwrap(), data);
    }

    #[test]
    fn group_inference() {
        let names: Vec<String> = ["a", "b=1", "b=2", "c"].iter().map(|s| s.to_string()).collect();
        let g = infer_groups(&names);
        assert_eq!(g.len(), 3);
        assert_eq!(g[1].columns, [1, 2]);
    }

    proptest! {
        #[test]
        fn min_max_round_trip(values in prop::collection::vec(-1e6f64..1e6, 2..50), log: bool) {
            let values: Vec<f64> = if log { values.iter().map(|v| v.abs() + 1e-3).collect() } else { values };
            let t = |v: f64| if log { v.ln() } else { v };
            let min = values.iter().copied().map(t).fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().map(t).fold(f64::NEG_INFINITY, f64::max);
            let col = ColumnMeta::Numeric { name: "v".into(), log, min, max };
            for &v in &values {
                let s = col.scale(v).unwrap();
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
                if max > min {
                    let back = col.unscale(s).unwrap();
                    // relative to the value on the log scale, to the column range otherwise
                    let scale = if log { v } else { min.abs().max(max.abs()).max(1.0) };
                    prop_assert!((back - v).abs() <= 1e-12 * scale);
                }
            }
        }

        #[test]
        fn split_is_a_partition(len in 2usize..300, frac in 0.05f64..0.95, seed: u64) {
            let items: Vec<usize> = (0..len).collect();
            let (a, b) = train_test_split(&items, frac, seed).unwrap();
            prop_assert_eq!(a.len() + b.len(), len);
            let mut all: Vec<usize> = a.into_iter().chain(b).collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }
    }
}
