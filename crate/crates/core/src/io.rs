//! Dataset ingestion and emission.
//!
//! Two on-disk formats are supported:
//! - dense CSV: a header row with a `label` column (integer class ids)
//!   and one column per real-valued feature;
//! - sparse counts: one sample per line, `label index:count index:count ...`
//!   with 1-based strictly ascending indices.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind, FeatureVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataFormat {
    Csv,
    Sparse,
}

impl DataFormat {
    pub fn parse(s: &str) -> Result<DataFormat> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "sparse" => Ok(DataFormat::Sparse),
            other => Err(Error::Config(format!("unknown data format `{other}`"))),
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    match format {
        DataFormat::Csv => parse_csv(&text, path),
        DataFormat::Sparse => parse_sparse(&text, path),
    }
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let text = match data.feature_kind {
        FeatureKind::Continuous => format_csv(data)?,
        FeatureKind::Count => format_sparse(data)?,
    };
    fs::write(path, text)?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        msg: msg.into(),
    }
}

fn parse_csv(text: &str, path: &Path) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_col = cols
        .iter()
        .position(|&c| c == "label")
        .ok_or_else(|| parse_err(path, 1, "no `label` column in header"))?;
    let dim = cols.len() - 1;
    if dim == 0 {
        return Err(parse_err(path, 1, "no feature columns"));
    }

    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        let mut features = Vec::with_capacity(dim);
        for (f, field) in fields.iter().enumerate() {
            if f == label_col {
                let y: usize = field
                    .parse()
                    .map_err(|_| parse_err(path, lineno, format!("bad label `{field}`")))?;
                if y == 0 {
                    return Err(parse_err(path, lineno, "labels are 1-based"));
                }
                labels.push(y);
            } else {
                let x: f64 = field
                    .parse()
                    .map_err(|_| parse_err(path, lineno, format!("bad feature value `{field}`")))?;
                features.push(x);
            }
        }
        samples.push(FeatureVector::Dense(features));
    }
    let num_classes = *labels
        .iter()
        .max()
        .ok_or_else(|| parse_err(path, 1, "no data rows"))?;
    Dataset::new(samples, labels, None, FeatureKind::Continuous, dim, num_classes)
}

fn parse_sparse(text: &str, path: &Path) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label_tok = parts.next().unwrap();
        let y: usize = label_tok
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad label `{label_tok}`")))?;
        if y == 0 {
            return Err(parse_err(path, lineno, "labels are 1-based"));
        }
        let mut entries: Vec<(usize, u32)> = Vec::new();
        for tok in parts {
            let (i_str, c_str) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(path, lineno, format!("bad entry `{tok}`")))?;
            let i: usize = i_str
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad index `{i_str}`")))?;
            let c: u32 = c_str
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad count `{c_str}`")))?;
            if i == 0 {
                return Err(parse_err(path, lineno, "indices are 1-based"));
            }
            if let Some(&(last, _)) = entries.last() {
                if i - 1 == last {
                    return Err(parse_err(path, lineno, format!("duplicate index {i}")));
                }
                if i - 1 < last {
                    return Err(parse_err(path, lineno, "indices must be ascending"));
                }
            }
            if c == 0 {
                return Err(parse_err(path, lineno, format!("zero count at index {i}")));
            }
            entries.push((i - 1, c));
        }
        if entries.is_empty() {
            return Err(parse_err(path, lineno, "empty document"));
        }
        dim = dim.max(entries.last().unwrap().0 + 1);
        labels.push(y);
        samples.push(FeatureVector::Sparse(entries));
    }
    let num_classes = *labels
        .iter()
        .max()
        .ok_or_else(|| parse_err(path, 1, "no data rows"))?;
    Dataset::new(samples, labels, None, FeatureKind::Count, dim, num_classes)
}

fn format_csv(data: &Dataset) -> Result<String> {
    let mut out = String::from("label");
    for l in 1..=data.dim {
        write!(out, ",f{l}").unwrap();
    }
    out.push('\n');
    for (s, &y) in data.samples.iter().zip(&data.labels) {
        write!(out, "{y}").unwrap();
        for &x in s.dense()? {
            write!(out, ",{x}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

fn format_sparse(data: &Dataset) -> Result<String> {
    let mut out = String::new();
    for (s, &y) in data.samples.iter().zip(&data.labels) {
        write!(out, "{y}").unwrap();
        for &(i, c) in s.sparse()? {
            write!(out, " {}:{}", i + 1, c).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}
