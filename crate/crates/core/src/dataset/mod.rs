//! Covariate schema, CSV ingestion, categorical vocabularies, continuous
//! normalization and train/eval splitting.

mod schema;
mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::RngStream;

pub use schema::{Covariate, CovariateKind, CovariateSchema};
pub use synthetic::{demo_schema, demo_truth, generate_synthetic, GroundTruth, SyntheticConfig};

/// Durations below this many days are clamped before taking the logarithm.
pub const MIN_DURATION_DAYS: f64 = 0.5;

/// A raw covariate value as it arrives from a file or a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Number(f64),
    Text(String),
}

impl RawValue {
    fn as_category(&self) -> String {
        match self {
            RawValue::Text(s) => s.clone(),
            RawValue::Number(v) => v.to_string(),
        }
    }

    fn as_number(&self, field: &str) -> Result<f64> {
        match self {
            RawValue::Number(v) => Ok(*v),
            RawValue::Text(s) => s.trim().parse().map_err(|_| Error::InvalidValue {
                field: field.to_string(),
                message: format!("expected a number, got `{s}`"),
            }),
        }
    }
}

pub type RawCovariates = BTreeMap<String, RawValue>;

/// Observed outcome: follow-up time in days and whether it was censored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub duration_days: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub values: RawCovariates,
    pub outcome: Outcome,
}

/// Category string to index map for one categorical covariate. Index 0 is
/// the out-of-vocabulary slot; seen categories take 1.. in order of first
/// appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct CategoryTable {
    values: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for CategoryTable {
    fn from(values: Vec<String>) -> Self {
        let index = values
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i + 1))
            .collect();
        Self { values, index }
    }
}

impl From<CategoryTable> for Vec<String> {
    fn from(t: CategoryTable) -> Self {
        t.values
    }
}

impl CategoryTable {
    fn insert(&mut self, value: &str) -> usize {
        if let Some(&i) = self.index.get(value) {
            return i;
        }
        self.values.push(value.to_string());
        let i = self.values.len();
        self.index.insert(value.to_string(), i);
        i
    }

    /// Index for `value`, or `None` when it was never seen.
    pub fn lookup(&self, value: &str) -> Option<usize> {
        self.index.get(value).copied()
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    /// Number of observed categories (not counting the OOV slot).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One [`CategoryTable`] per categorical covariate, in schema order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tables: Vec<CategoryTable>,
}

impl Vocabulary {
    pub fn fit<'a>(schema: &CovariateSchema, rows: impl IntoIterator<Item = &'a RawCovariates>) -> Result<Self> {
        let cats: Vec<(&Covariate, usize)> = schema.categorical().collect();
        let mut tables = vec![CategoryTable::default(); cats.len()];
        for values in rows {
            for ((cov, _), table) in cats.iter().zip(tables.iter_mut()) {
                let v = values
                    .get(&cov.name)
                    .ok_or_else(|| Error::MissingField(cov.name.clone()))?;
                table.insert(&v.as_category());
            }
        }
        for ((cov, d), table) in cats.iter().zip(&tables) {
            if table.len() > *d {
                return Err(Error::Schema(format!(
                    "`{}` declares {d} categories but the data contains {}",
                    cov.name,
                    table.len()
                )));
            }
        }
        Ok(Self { tables })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnNorm {
    pub mean: f64,
    pub std: f64,
}

/// Training-set mean and (population) standard deviation per continuous covariate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub columns: Vec<ColumnNorm>,
}

impl NormStats {
    pub fn fit<'a>(schema: &CovariateSchema, rows: impl IntoIterator<Item = &'a RawCovariates>) -> Result<Self> {
        let names: Vec<&str> = schema.continuous().map(|c| c.name.as_str()).collect();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for values in rows {
            for (col, name) in columns.iter_mut().zip(&names) {
                let v = values
                    .get(*name)
                    .ok_or_else(|| Error::MissingField(name.to_string()))?
                    .as_number(name)?;
                col.push(v);
            }
        }
        let columns = columns
            .iter()
            .map(|col| {
                if col.is_empty() {
                    return ColumnNorm { mean: 0.0, std: 1.0 };
                }
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let std = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
                let std = if std > 1e-12 && std.is_finite() { std } else { 1.0 };
                ColumnNorm { mean, std }
            })
            .collect();
        Ok(Self { columns })
    }
}

/// One encoded individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Normalized continuous covariates, schema order.
    pub x_cont: Vec<f64>,
    /// Category indices (0 = unseen), schema order.
    pub x_cat: Vec<usize>,
    /// ln(duration in days).
    pub y: f64,
    pub censored: bool,
}

impl Record {
    pub fn duration_days(&self) -> f64 {
        self.y.exp()
    }
}

/// Encodes covariates only. Unseen categories map to index 0.
///
/// Returns the encoded vectors plus the names of categorical covariates whose
/// values fell back to the out-of-vocabulary slot.
pub fn encode_covariates(
    values: &RawCovariates,
    schema: &CovariateSchema,
    vocab: &Vocabulary,
    norms: &NormStats,
) -> Result<(Vec<f64>, Vec<usize>, Vec<String>)> {
    let mut x_cont = Vec::with_capacity(norms.columns.len());
    let mut x_cat = Vec::with_capacity(vocab.tables.len());
    let mut oov = Vec::new();
    let (mut ci, mut ki) = (0, 0);
    for cov in &schema.covariates {
        let v = values
            .get(&cov.name)
            .ok_or_else(|| Error::MissingField(cov.name.clone()))?;
        match cov.kind {
            CovariateKind::Continuous => {
                let n = norms.columns[ci];
                x_cont.push((v.as_number(&cov.name)? - n.mean) / n.std);
                ci += 1;
            }
            CovariateKind::Categorical(_) => {
                match vocab.tables[ki].lookup(&v.as_category()) {
                    Some(i) => x_cat.push(i),
                    None => {
                        x_cat.push(0);
                        oov.push(cov.name.clone());
                    }
                }
                ki += 1;
            }
        }
    }
    Ok((x_cont, x_cat, oov))
}

pub fn encode_record(
    raw: &RawRow,
    schema: &CovariateSchema,
    vocab: &Vocabulary,
    norms: &NormStats,
) -> Result<Record> {
    let (x_cont, x_cat, _) = encode_covariates(&raw.values, schema, vocab, norms)?;
    Ok(Record {
        x_cont,
        x_cat,
        y: raw.outcome.duration_days.max(MIN_DURATION_DAYS).ln(),
        censored: raw.outcome.censored,
    })
}

/// Encoded records together with the fitted encoders and the raw rows they
/// came from. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: CovariateSchema,
    pub vocab: Vocabulary,
    pub norms: NormStats,
    pub records: Vec<Record>,
    pub raw: Vec<RawRow>,
    pub provenance: String,
}

impl Dataset {
    /// Fits vocabulary and normalization on `raw`, then encodes it.
    pub fn fit(schema: CovariateSchema, raw: Vec<RawRow>, provenance: impl Into<String>) -> Result<Self> {
        schema.validate()?;
        let vocab = Vocabulary::fit(&schema, raw.iter().map(|r| &r.values))?;
        let norms = NormStats::fit(&schema, raw.iter().map(|r| &r.values))?;
        Self::encode_with(schema, vocab, norms, raw, provenance)
    }

    /// Encodes `raw` with encoders fitted elsewhere.
    pub fn encode_with(
        schema: CovariateSchema,
        vocab: Vocabulary,
        norms: NormStats,
        raw: Vec<RawRow>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let records = raw
            .iter()
            .map(|r| encode_record(r, &schema, &vocab, &norms))
            .collect::<Result<_>>()?;
        Ok(Self {
            schema,
            vocab,
            norms,
            records,
            raw,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.censored).count() as f64 / self.records.len() as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_rows_csv(file, &self.schema, &self.raw)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CovariateSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = read_rows_csv(file, schema)?;
    Dataset::fit(schema.clone(), rows, path.display().to_string())
}

/// Reads full rows (covariates and outcome) from CSV.
pub fn read_rows_csv<R: Read>(reader: R, schema: &CovariateSchema) -> Result<Vec<RawRow>> {
    let rows = read_csv(reader, schema, true)?;
    Ok(rows
        .into_iter()
        .map(|(values, outcome)| RawRow {
            values,
            outcome: outcome.expect("outcome columns are required"),
        })
        .collect())
}

/// Reads covariates only; outcome columns may be absent.
pub fn read_covariates_csv<R: Read>(reader: R, schema: &CovariateSchema) -> Result<Vec<RawCovariates>> {
    Ok(read_csv(reader, schema, false)?.into_iter().map(|(v, _)| v).collect())
}

fn read_csv<R: Read>(
    reader: R,
    schema: &CovariateSchema,
    with_outcome: bool,
) -> Result<Vec<(RawCovariates, Option<Outcome>)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(Error::Empty("no header row".into()));
    }
    let col = |name: &str| header.iter().position(|h| h == name);
    let find = |name: &str| col(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let outcome_cols = if with_outcome {
        Some((find(&schema.duration_column)?, find(&schema.censor_column)?))
    } else {
        None
    };

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(out.len() + 2, |p| p.line() as usize);
        let parse_err = |column: &str, message: String| Error::Parse {
            row,
            column: column.to_string(),
            message,
        };
        let cell = |i: usize, column: &str| {
            rec.get(i)
                .ok_or_else(|| parse_err(column, "missing cell".into()))
        };
        let mut values = RawCovariates::new();
        for (cov, &i) in schema.covariates.iter().zip(&cov_cols) {
            let text = cell(i, &cov.name)?;
            let value = match cov.kind {
                CovariateKind::Continuous => {
                    let v: f64 = text
                        .parse()
                        .map_err(|_| parse_err(&cov.name, format!("`{text}` is not a number")))?;
                    if !v.is_finite() {
                        return Err(parse_err(&cov.name, format!("`{text}` is not finite")));
                    }
                    RawValue::Number(v)
                }
                CovariateKind::Categorical(_) => RawValue::Text(text.to_string()),
            };
            values.insert(cov.name.clone(), value);
        }
        let outcome = match outcome_cols {
            Some((di, ci)) => {
                let dname = &schema.duration_column;
                let cname = &schema.censor_column;
                let text = cell(di, dname)?;
                let duration: f64 = text
                    .parse()
                    .map_err(|_| parse_err(dname, format!("`{text}` is not a duration in days")))?;
                if !(duration.is_finite() && duration >= 0.0) {
                    return Err(parse_err(dname, format!("duration `{text}` must be finite and non-negative")));
                }
                let censored = match cell(ci, cname)? {
                    "0" | "false" => false,
                    "1" | "true" => true,
                    other => return Err(parse_err(cname, format!("censoring flag must be 0 or 1, got `{other}`"))),
                };
                Some(Outcome {
                    duration_days: duration,
                    censored,
                })
            }
            None => None,
        };
        out.push((values, outcome));
    }
    if out.is_empty() {
        return Err(Error::Empty("no data rows".into()));
    }
    Ok(out)
}

pub fn write_rows_csv<W: Write>(writer: W, schema: &CovariateSchema, rows: &[RawRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.covariates.iter().map(|c| c.name.as_str()).collect();
    header.push(&schema.duration_column);
    header.push(&schema.censor_column);
    w.write_record(&header)?;
    for row in rows {
        let mut fields: Vec<String> = schema
            .covariates
            .iter()
            .map(|c| match row.values.get(&c.name) {
                Some(RawValue::Number(v)) => v.to_string(),
                Some(RawValue::Text(s)) => s.clone(),
                None => String::new(),
            })
            .collect();
        fields.push(row.outcome.duration_days.to_string());
        fields.push(if row.outcome.censored { "1" } else { "0" }.to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Seeded random split. Encoders are refitted on the training part and
/// applied unchanged to the evaluation part.
pub fn split_train_eval(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let n = dataset.raw.len();
    if n < 2 {
        return Err(Error::Empty(format!("need at least 2 records to split, have {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed);
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        idx.swap(i, j);
    }
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let pick = |ids: &[usize]| ids.iter().map(|&i| dataset.raw[i].clone()).collect::<Vec<_>>();
    let train = Dataset::fit(
        dataset.schema.clone(),
        pick(&idx[..n_train]),
        format!("{} [train split, seed {seed}]", dataset.provenance),
    )?;
    let eval = Dataset::encode_with(
        dataset.schema.clone(),
        train.vocab.clone(),
        train.norms.clone(),
        pick(&idx[n_train..]),
        format!("{} [eval split, seed {seed}]", dataset.provenance),
    )?;
    Ok((train, eval))
}
