//! CSV matrices and datasets, JSON and JSON Lines output, content hashing.
//!
//! Matrix files are headerless: one record per row, one field per column.
//! Dataset files carry a header `x0,...,x{d-1},label` with label `-1` for
//! unlabeled rows. Floats are written in Rust's shortest round-trip form, so
//! a write followed by a read reproduces every value bitwise.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Result, SlaError};
use crate::selftrain::Dataset;

fn parse_error(path: &Path, line: u64, msg: impl Into<String>) -> SlaError {
    SlaError::Parse {
        path: path.display().to_string(),
        line: line as usize,
        msg: msg.into(),
    }
}

fn csv_error(path: &Path, err: csv::Error) -> SlaError {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => SlaError::Io(e),
        kind => parse_error(path, line, format!("{kind:?}")),
    }
}

fn reader<R: Read>(source: R, has_headers: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source)
}

fn parse_f64(path: &Path, line: u64, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_error(path, line, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_error(
            path,
            line,
            format!("non-finite value {field:?}"),
        ));
    }
    Ok(v)
}

/// Parses a headerless numeric CSV. `path` only labels error messages.
pub fn parse_matrix_csv<R: Read>(source: R, path: &Path) -> Result<Array2<f64>> {
    let mut rdr = reader(source, false);
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(parse_error(
                    path,
                    line,
                    format!("expected {w} fields, found {}", record.len()),
                ))
            }
            Some(_) => {}
        }
        for field in record.iter() {
            values.push(parse_f64(path, line, field)?);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| parse_error(path, 1, "no rows"))?;
    Array2::from_shape_vec((rows, width), values).map_err(|e| parse_error(path, 0, e.to_string()))
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    parse_matrix_csv(File::open(path)?, path)
}

pub fn write_matrix_csv(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in matrix.outer_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a dataset CSV into features and labels (`None` for `-1`).
pub fn parse_labeled_csv<R: Read>(
    source: R,
    path: &Path,
) -> Result<(Array2<f64>, Vec<Option<usize>>)> {
    let mut rdr = reader(source, true);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 || header.get(header.len() - 1) != Some("label") {
        return Err(parse_error(
            path,
            1,
            "header must end with a `label` column",
        ));
    }
    let dim = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", dim + 1, record.len()),
            ));
        }
        for field in record.iter().take(dim) {
            features.push(parse_f64(path, line, field)?);
        }
        let label: i64 = record[dim]
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad label {:?}", &record[dim])))?;
        labels.push(match label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(parse_error(path, line, format!("bad label {l}"))),
        });
    }
    let features = Array2::from_shape_vec((labels.len(), dim), features)
        .map_err(|e| parse_error(path, 0, e.to_string()))?;
    Ok((features, labels))
}

pub fn read_labeled_csv(path: &Path) -> Result<(Array2<f64>, Vec<Option<usize>>)> {
    parse_labeled_csv(File::open(path)?, path)
}

pub fn write_labeled_csv(
    path: &Path,
    features: &Array2<f64>,
    labels: &[Option<usize>],
) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(SlaError::InvalidInput(
            "feature and label counts differ".into(),
        ));
    }
    let mut out = BufWriter::new(File::create(path)?);
    let mut header: Vec<String> = (0..features.ncols()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    writeln!(out, "{}", header.join(","))?;
    for (row, label) in features.outer_iter().zip(labels) {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        fields.push(label.map_or("-1".to_string(), |l| l.to_string()));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `train.csv` and `test.csv` into `dir`.
pub fn export_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_labeled_csv(&dir.join("train.csv"), &dataset.features, &dataset.labels)?;
    let test: Vec<Option<usize>> = dataset.test_labels.iter().map(|&y| Some(y)).collect();
    write_labeled_csv(&dir.join("test.csv"), &dataset.test_features, &test)
}

/// Reads a directory written by [`export_dataset`]. The class count is one
/// more than the largest label seen in either split.
pub fn import_dataset(dir: &Path) -> Result<Dataset> {
    let test_path = dir.join("test.csv");
    let (features, labels) = read_labeled_csv(&dir.join("train.csv"))?;
    let (test_features, test) = read_labeled_csv(&test_path)?;
    let test_labels = test
        .iter()
        .enumerate()
        .map(|(i, y)| {
            y.ok_or_else(|| parse_error(&test_path, i as u64 + 2, "test rows need labels"))
        })
        .collect::<Result<Vec<_>>>()?;
    let num_classes = labels
        .iter()
        .flatten()
        .chain(&test_labels)
        .max()
        .map_or(0, |&m| m + 1);
    Dataset::new(features, labels, num_classes, test_features, test_labels)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Append-only JSON Lines sink. Each record is flushed as soon as it is
/// written so a concurrent reader sees whole lines.
pub struct JsonlWriter {
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// SHA-256 of `blob <len>\0<content>`, the object id git assigns to a file
/// in a SHA-256 repository.
pub fn content_hash(content: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", content.len()).as_bytes());
    hasher.update(content);
    hex::encode(hasher.finalize())
}
