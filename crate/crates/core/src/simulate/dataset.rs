use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("the first column must be `t`, found `{0}`")]
    NoTimeColumn(String),
    #[error("row {row}: cannot parse `{text}` in column `{column}`")]
    Parse { row: usize, column: String, text: String },
    #[error("row {row}: non-finite value in column `{column}`")]
    NonFinite { row: usize, column: String },
    #[error("time grid is not strictly increasing and uniform at row {row}")]
    NonUniform { row: usize },
    #[error("dataset needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("column `{column}` has {got} samples, expected {expected}")]
    Length { column: String, expected: usize, got: usize },
    #[error("invalid split {train_end}/{val_end} for {n} samples")]
    BadSplit { train_end: usize, val_end: usize, n: usize },
    #[error("expected {expected} rows, found {got}")]
    RowCount { expected: usize, got: usize },
    #[error("missing column `{0}`")]
    MissingColumn(String),
}

/// Train / validation / test boundaries as sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_end: usize,
    pub val_end: usize,
}

impl Split {
    /// Segment lengths, e.g. `1000,500,1000`.
    pub fn from_sizes(train: usize, val: usize) -> Split {
        Split { train_end: train, val_end: train + val }
    }

    /// The 1000/500/1000 proportions scaled to `n` samples.
    pub fn proportional(n: usize) -> Split {
        let train_end = (n * 2 / 5).max(1);
        let val_end = (n * 3 / 5).max(train_end + 1).min(n);
        Split { train_end, val_end }
    }
}

/// Named segment of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Train,
    Validation,
    Test,
}

/// Uniformly sampled signals with segment boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    t: Vec<f64>,
    columns: IndexMap<String, Vec<f64>>,
    split: Split,
}

impl Dataset {
    /// Validates the grid and values; the split defaults to the 2:1:2
    /// proportions of the benchmark.
    pub fn new(t: Vec<f64>, columns: IndexMap<String, Vec<f64>>) -> Result<Dataset, DataError> {
        let n = t.len();
        if n < 2 {
            return Err(DataError::TooShort(n));
        }
        check_finite("t", &t)?;
        let dt = t[1] - t[0];
        for i in 1..n {
            let d = t[i] - t[i - 1];
            if !(d > 0.0) || (d - dt).abs() >= 1e-9 * dt {
                return Err(DataError::NonUniform { row: i });
            }
        }
        for (name, col) in &columns {
            if col.len() != n {
                return Err(DataError::Length { column: name.clone(), expected: n, got: col.len() });
            }
            check_finite(name, col)?;
        }
        Ok(Dataset { t, columns, split: Split::proportional(n) })
    }

    pub fn with_split(mut self, split: Split) -> Result<Dataset, DataError> {
        let n = self.len();
        if !(0 < split.train_end && split.train_end < split.val_end && split.val_end <= n) {
            return Err(DataError::BadSplit { train_end: split.train_end, val_end: split.val_end, n });
        }
        self.split = split;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn dt(&self) -> f64 {
        self.t[1] - self.t[0]
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn require(&self, name: &str) -> Result<&[f64], DataError> {
        self.column(name).ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Replaces or appends a column.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<(), DataError> {
        if values.len() != self.len() {
            return Err(DataError::Length { column: name.into(), expected: self.len(), got: values.len() });
        }
        check_finite(name, &values)?;
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    pub fn range(&self, seg: Segment) -> Range<usize> {
        let Split { train_end, val_end } = self.split;
        match seg {
            Segment::Train => 0..train_end,
            Segment::Validation => train_end..val_end,
            Segment::Test => val_end..self.len(),
        }
    }

    /// Reads a CSV with a header row whose first column is `t`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        match header.first() {
            Some(h) if h == "t" => {}
            other => return Err(DataError::NoTimeColumn(other.cloned().unwrap_or_default())),
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| DataError::Parse {
                    row,
                    column: header[k].clone(),
                    text: field.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::NonFinite { row, column: header[k].clone() });
                }
                cols[k].push(v);
            }
        }
        let t = cols.remove(0);
        Dataset::new(t, header.into_iter().skip(1).zip(cols).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
        Dataset::read_csv(std::fs::File::open(path)?)
    }

    /// Writes `t` followed by every column. Values use the shortest
    /// representation that round-trips.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t"];
        header.extend(self.column_names());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.t[i].to_string()];
            row.extend(self.columns.values().map(|c| c[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn check_finite(name: &str, col: &[f64]) -> Result<(), DataError> {
    match col.iter().position(|v| !v.is_finite()) {
        Some(row) => Err(DataError::NonFinite { row, column: name.to_string() }),
        None => Ok(()),
    }
}
