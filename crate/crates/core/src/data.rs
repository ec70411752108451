//! Dataset model: a block of continuous variables with a missing-value mask
//! next to a block of categorical variables, plus CSV/JSON ingestion.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the row sum of fully observed compositional rows.
pub const COMPOSITION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalVar {
    pub name: String,
    pub modalities: Vec<String>,
}

impl CategoricalVar {
    pub fn new(name: impl Into<String>, modalities: &[&str]) -> Self {
        CategoricalVar {
            name: name.into(),
            modalities: modalities.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn modality_index(&self, label: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m == label)
    }
}

/// Variable declarations for both blocks. Modalities are declared, never
/// inferred from data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub continuous: Vec<String>,
    pub categorical: Vec<CategoricalVar>,
    #[serde(default)]
    pub compositional: bool,
}

impl Schema {
    pub fn new(continuous: Vec<String>, categorical: Vec<CategoricalVar>, compositional: bool) -> Result<Self> {
        let schema = Schema {
            continuous,
            categorical,
            compositional,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.continuous.is_empty() {
            return Err(Error::Schema("no continuous variables".into()));
        }
        if self.categorical.is_empty() {
            return Err(Error::Schema("no categorical variables".into()));
        }
        let mut seen = HashSet::new();
        let names = self.continuous.iter().chain(self.categorical.iter().map(|v| &v.name));
        for name in names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate identifier {name:?}")));
            }
        }
        for var in &self.categorical {
            if var.modalities.len() < 2 {
                return Err(Error::Schema(format!(
                    "categorical variable {:?} needs at least 2 modalities",
                    var.name
                )));
            }
            let distinct: HashSet<_> = var.modalities.iter().collect();
            if distinct.len() != var.modalities.len() {
                return Err(Error::Schema(format!(
                    "categorical variable {:?} has duplicate modalities",
                    var.name
                )));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.continuous.len()
    }

    pub fn l(&self) -> usize {
        self.categorical.len()
    }

    pub fn modality_counts(&self) -> Vec<usize> {
        self.categorical.iter().map(|v| v.modalities.len()).collect()
    }

    pub fn continuous_index(&self, name: &str) -> Option<usize> {
        self.continuous.iter().position(|n| n == name)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_reader(BufReader::new(file))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

/// N×p real block stored row-major with an explicit observation mask.
/// Unobserved cells hold 0.0 in `values` and must be read through the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTable {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl ContinuousTable {
    pub fn new(n_cols: usize, values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if n_cols == 0 {
            return Err(Error::InvalidArgument("table needs at least one column".into()));
        }
        if values.len() != observed.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: observed.len(),
            });
        }
        if !values.len().is_multiple_of(n_cols) {
            return Err(Error::DimensionMismatch {
                expected: n_cols,
                found: values.len() % n_cols,
            });
        }
        let n_rows = values.len() / n_cols;
        let mut values = values;
        for (v, &o) in values.iter_mut().zip(&observed) {
            if !o {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidArgument("non-finite continuous value".into()));
            }
        }
        let table = ContinuousTable {
            n_rows,
            n_cols,
            values,
            observed,
        };
        for i in 0..n_rows {
            if !table.mask(i).iter().any(|&o| o) {
                return Err(Error::EmptyRow { row: i });
            }
        }
        Ok(table)
    }

    /// Fully observed table from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        let observed = vec![true; values.len()];
        ContinuousTable::new(n_cols, values, observed)
    }

    /// Table from rows of optional cells; `None` is unobserved.
    pub fn from_optional_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        let mut observed = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    found: row.len(),
                });
            }
            for cell in row {
                values.push(cell.unwrap_or(0.0));
                observed.push(cell.is_some());
            }
        }
        ContinuousTable::new(n_cols, values, observed)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn mask(&self, i: usize) -> &[bool] {
        &self.observed[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.n_cols + j;
        self.observed[k].then_some(self.values[k])
    }

    pub fn is_fully_observed(&self, i: usize) -> bool {
        self.mask(i).iter().all(|&o| o)
    }

    /// Observed values of column `j`, paired with their row index.
    pub fn observed_column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n_rows).filter_map(move |i| self.get(i, j).map(|v| (i, v)))
    }

    /// Per-column mean over observed entries (`None` for an all-missing column).
    pub fn column_means(&self) -> Vec<Option<f64>> {
        (0..self.n_cols)
            .map(|j| {
                let (sum, count) = self
                    .observed_column(j)
                    .fold((0.0, 0usize), |(s, c), (_, v)| (s + v, c + 1));
                (count > 0).then(|| sum / count as f64)
            })
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> ContinuousTable {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        let mut observed = Vec::with_capacity(rows.len() * self.n_cols);
        for &i in rows {
            values.extend_from_slice(self.row(i));
            observed.extend_from_slice(self.mask(i));
        }
        ContinuousTable {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            values,
            observed,
        }
    }

    /// Keeps the listed columns, in the given order, without rescaling.
    pub fn restrict_columns(&self, keep: &[usize]) -> Result<ContinuousTable> {
        if keep.is_empty() {
            return Err(Error::InvalidArgument("no columns kept".into()));
        }
        if let Some(&bad) = keep.iter().find(|&&j| j >= self.n_cols) {
            return Err(Error::InvalidArgument(format!(
                "column {bad} out of range for {} columns",
                self.n_cols
            )));
        }
        let mut values = Vec::with_capacity(self.n_rows * keep.len());
        let mut observed = Vec::with_capacity(self.n_rows * keep.len());
        for i in 0..self.n_rows {
            let (row, mask) = (self.row(i), self.mask(i));
            for &j in keep {
                values.push(row[j]);
                observed.push(mask[j]);
            }
        }
        ContinuousTable::new(keep.len(), values, observed)
    }
}

/// Restricts a compositional table to `keep` and rescales each row so its
/// observed kept entries sum to 100.
pub fn renormalize_composition(table: &ContinuousTable, keep: &[usize]) -> Result<ContinuousTable> {
    let mut restricted = table.restrict_columns(keep)?;
    let n_cols = restricted.n_cols;
    for i in 0..restricted.n_rows {
        let span = i * n_cols..(i + 1) * n_cols;
        let total: f64 = restricted.values[span.clone()]
            .iter()
            .zip(&restricted.observed[span.clone()])
            .filter(|(_, &o)| o)
            .map(|(v, _)| v)
            .sum();
        if total <= 0.0 {
            return Err(Error::ZeroComposition { row: i });
        }
        let scale = 100.0 / total;
        for v in &mut restricted.values[span] {
            *v *= scale;
        }
    }
    Ok(restricted)
}

/// N×l modality codes; `None` marks a missing cell, which is only legal for
/// individuals being allocated, never in a learning base.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalTable {
    n_rows: usize,
    n_vars: usize,
    codes: Vec<Option<usize>>,
}

impl CategoricalTable {
    pub fn new(n_vars: usize, codes: Vec<Option<usize>>) -> Result<Self> {
        if n_vars == 0 {
            return Err(Error::InvalidArgument("table needs at least one variable".into()));
        }
        if !codes.len().is_multiple_of(n_vars) {
            return Err(Error::DimensionMismatch {
                expected: n_vars,
                found: codes.len() % n_vars,
            });
        }
        Ok(CategoricalTable {
            n_rows: codes.len() / n_vars,
            n_vars,
            codes,
        })
    }

    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let n_vars = rows.first().map_or(0, Vec::len);
        let mut codes = Vec::with_capacity(rows.len() * n_vars);
        for row in rows {
            if row.len() != n_vars {
                return Err(Error::DimensionMismatch {
                    expected: n_vars,
                    found: row.len(),
                });
            }
            codes.extend(row.iter().map(|&c| Some(c)));
        }
        CategoricalTable::new(n_vars, codes)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn row(&self, i: usize) -> &[Option<usize>] {
        &self.codes[i * self.n_vars..(i + 1) * self.n_vars]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Option<usize>]> {
        self.codes.chunks(self.n_vars)
    }

    pub fn is_complete(&self) -> bool {
        self.codes.iter().all(Option::is_some)
    }

    pub fn missing_in_row(&self, i: usize) -> usize {
        self.row(i).iter().filter(|c| c.is_none()).count()
    }

    pub fn select_rows(&self, rows: &[usize]) -> CategoricalTable {
        let codes = rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        CategoricalTable {
            n_rows: rows.len(),
            n_vars: self.n_vars,
            codes,
        }
    }

    /// Checks every present code against the schema's modality counts.
    pub fn validate_codes(&self, schema: &Schema) -> Result<()> {
        if self.n_vars != schema.l() {
            return Err(Error::DimensionMismatch {
                expected: schema.l(),
                found: self.n_vars,
            });
        }
        let counts = schema.modality_counts();
        for (i, row) in self.rows().enumerate() {
            for (j, code) in row.iter().enumerate() {
                if let Some(c) = *code {
                    if c >= counts[j] {
                        return Err(Error::UnknownModality {
                            file: "<memory>".into(),
                            row: i,
                            column: schema.categorical[j].name.clone(),
                            label: c.to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// A learning base: both blocks over the same N individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub continuous: ContinuousTable,
    pub categorical: CategoricalTable,
}

impl Dataset {
    pub fn new(schema: Schema, continuous: ContinuousTable, categorical: CategoricalTable) -> Result<Self> {
        schema.validate()?;
        if continuous.n_cols() != schema.p() {
            return Err(Error::DimensionMismatch {
                expected: schema.p(),
                found: continuous.n_cols(),
            });
        }
        if continuous.n_rows() != categorical.n_rows() {
            return Err(Error::RowCountMismatch {
                left: continuous.n_rows(),
                right: categorical.n_rows(),
            });
        }
        categorical.validate_codes(&schema)?;
        if let Some(pos) = categorical.codes.iter().position(Option::is_none) {
            let (row, col) = (pos / categorical.n_vars, pos % categorical.n_vars);
            return Err(Error::MissingValue {
                file: "<memory>".into(),
                row,
                column: schema.categorical[col].name.clone(),
            });
        }
        if schema.compositional {
            for i in 0..continuous.n_rows() {
                if continuous.is_fully_observed(i) {
                    let total: f64 = continuous.row(i).iter().sum();
                    if (total - 100.0).abs() > COMPOSITION_TOLERANCE {
                        return Err(Error::InvalidArgument(format!(
                            "row {i}: compositional row sums to {total}, expected 100"
                        )));
                    }
                }
            }
        }
        Ok(Dataset {
            schema,
            continuous,
            categorical,
        })
    }

    pub fn n(&self) -> usize {
        self.continuous.n_rows()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            continuous: self.continuous.select_rows(rows),
            categorical: self.categorical.select_rows(rows),
        }
    }

    /// Keeps the listed continuous columns; rescales rows to 100 when the
    /// schema is compositional, otherwise leaves values untouched.
    pub fn select_continuous(&self, keep: &[usize]) -> Result<Dataset> {
        let continuous = if self.schema.compositional {
            renormalize_composition(&self.continuous, keep)?
        } else {
            self.continuous.restrict_columns(keep)?
        };
        let mut schema = self.schema.clone();
        schema.continuous = keep.iter().map(|&j| self.schema.continuous[j].clone()).collect();
        Ok(Dataset {
            schema,
            continuous,
            categorical: self.categorical.clone(),
        })
    }

    /// Same as [`Dataset::select_continuous`] with columns named.
    pub fn select_continuous_by_name(&self, names: &[String]) -> Result<Dataset> {
        let keep = names
            .iter()
            .map(|n| {
                self.schema
                    .continuous_index(n)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown continuous variable {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.select_continuous(&keep)
    }
}

/// Row indices of a uniform random (train, test) partition, each sorted.
pub fn split_indices(n: usize, test_count: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if test_count == 0 || test_count >= n {
        return Err(Error::InvalidArgument(format!(
            "test_count must lie in (0, {n}), got {test_count}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..test_count].to_vec();
    let mut train = order[test_count..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn split_dataset(d: &Dataset, test_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(d.n(), test_count, seed)?;
    Ok((d.subset(&train), d.subset(&test)))
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))
}

fn check_header(path: &Path, reader: &mut csv::Reader<File>, expected: &[String]) -> Result<()> {
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if found != expected {
        return Err(Error::HeaderMismatch {
            file: file_label(path),
            expected: expected.to_vec(),
            found,
        });
    }
    Ok(())
}

/// Reads the continuous block; empty fields become unobserved cells.
/// Row numbers in errors are 1-based data rows (the header is row 0).
pub fn load_continuous(path: impl AsRef<Path>, schema: &Schema) -> Result<ContinuousTable> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &schema.continuous)?;
    let p = schema.p();
    let mut values = Vec::new();
    let mut observed = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let row = r + 1;
        if record.len() != p {
            return Err(Error::RowWidth {
                file: file_label(path),
                row,
                expected: p,
                found: record.len(),
            });
        }
        let mut any = false;
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                values.push(0.0);
                observed.push(false);
                continue;
            }
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::MalformedNumber {
                    file: file_label(path),
                    row,
                    column: schema.continuous[j].clone(),
                    text: field.to_string(),
                })?;
            values.push(v);
            observed.push(true);
            any = true;
        }
        if !any {
            return Err(Error::EmptyRow { row });
        }
    }
    ContinuousTable::new(p, values, observed)
}

/// Reads the categorical block. With `allow_missing`, empty fields become
/// missing cells (new individuals); otherwise they are an error.
pub fn load_categorical(path: impl AsRef<Path>, schema: &Schema, allow_missing: bool) -> Result<CategoricalTable> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let names: Vec<String> = schema.categorical.iter().map(|v| v.name.clone()).collect();
    check_header(path, &mut reader, &names)?;
    let l = schema.l();
    let mut codes = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let row = r + 1;
        if record.len() != l {
            return Err(Error::RowWidth {
                file: file_label(path),
                row,
                expected: l,
                found: record.len(),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let var = &schema.categorical[j];
            let field = field.trim();
            if field.is_empty() {
                if !allow_missing {
                    return Err(Error::MissingValue {
                        file: file_label(path),
                        row,
                        column: var.name.clone(),
                    });
                }
                codes.push(None);
                continue;
            }
            let code = var.modality_index(field).ok_or_else(|| Error::UnknownModality {
                file: file_label(path),
                row,
                column: var.name.clone(),
                label: field.to_string(),
            })?;
            codes.push(Some(code));
        }
    }
    CategoricalTable::new(l, codes)
}

pub fn load_dataset(
    continuous_path: impl AsRef<Path>,
    categorical_path: impl AsRef<Path>,
    schema: &Schema,
) -> Result<Dataset> {
    schema.validate()?;
    let continuous = load_continuous(continuous_path, schema)?;
    let categorical = load_categorical(categorical_path, schema, false)?;
    Dataset::new(schema.clone(), continuous, categorical)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes the continuous block with shortest round-trip float formatting.
pub fn save_continuous(path: impl AsRef<Path>, schema: &Schema, table: &ContinuousTable) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer
        .write_record(&schema.continuous)
        .map_err(|e| Error::csv(path, e))?;
    for i in 0..table.n_rows() {
        let fields = (0..table.n_cols()).map(|j| table.get(i, j).map(|v| v.to_string()).unwrap_or_default());
        writer.write_record(fields).map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn save_categorical(path: impl AsRef<Path>, schema: &Schema, table: &CategoricalTable) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer
        .write_record(schema.categorical.iter().map(|v| v.name.as_str()))
        .map_err(|e| Error::csv(path, e))?;
    for row in table.rows() {
        let fields = row.iter().zip(&schema.categorical).map(|(code, var)| match code {
            Some(c) => var.modalities[*c].as_str(),
            None => "",
        });
        writer.write_record(fields).map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn save_dataset(continuous_path: impl AsRef<Path>, categorical_path: impl AsRef<Path>, d: &Dataset) -> Result<()> {
    save_continuous(continuous_path, &d.schema, &d.continuous)?;
    save_categorical(categorical_path, &d.schema, &d.categorical)
}

/// Cluster labels as a one-column CSV with header `cluster`.
pub fn save_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "cluster").map_err(io)?;
    for l in labels {
        writeln!(out, "{l}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads integer labels from the named column of a CSV.
pub fn load_labels(path: impl AsRef<Path>, column: &str) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::HeaderMismatch {
            file: file_label(path),
            expected: vec![column.to_string()],
            found: headers.iter().map(str::to_string).collect(),
        })?;
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let text = record.get(col).unwrap_or("").trim();
        let label = text.parse().map_err(|_| Error::MalformedNumber {
            file: file_label(path),
            row: r + 1,
            column: column.to_string(),
            text: text.to_string(),
        })?;
        labels.push(label);
    }
    Ok(labels)
}

pub(crate) fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}
