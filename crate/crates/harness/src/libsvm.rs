//! LibSVM text format: `label idx:val idx:val ...` with 1-based, strictly
//! increasing indices. Blank lines and `#` comments are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LibsvmError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// One parsed line. Indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSample {
    pub label: f64,
    pub features: Vec<(usize, f64)>,
}

impl SparseSample {
    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut x = vec![0.0; d];
        for &(k, v) in &self.features {
            if k < d {
                x[k] = v;
            }
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmData {
    pub samples: Vec<SparseSample>,
    /// Largest index seen (1-based), i.e. the feature dimension.
    pub dim: usize,
}

pub fn parse_libsvm(path: impl AsRef<Path>) -> Result<LibsvmData, LibsvmError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LibsvmError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_libsvm_str(&text)
}

pub fn parse_libsvm_str(text: &str) -> Result<LibsvmData, LibsvmError> {
    let mut samples = Vec::new();
    let mut dim = 0;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_line(line, ln + 1)?;
        if let Some(&(k, _)) = sample.features.last() {
            dim = dim.max(k + 1);
        }
        samples.push(sample);
    }
    Ok(LibsvmData { samples, dim })
}

/// Whitespace-separated tokens with their 1-based columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.char_indices()
        .filter(move |&(i, c)| {
            !c.is_whitespace() && line[..i].chars().next_back().is_none_or(char::is_whitespace)
        })
        .map(move |(i, _)| {
            let rest = &line[i..];
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            (line[..i].chars().count() + 1, &rest[..end])
        })
}

fn parse_line(line: &str, ln: usize) -> Result<SparseSample, LibsvmError> {
    let err = |column: usize, message: String| LibsvmError::Parse {
        line: ln,
        column,
        message,
    };
    let mut toks = tokens(line);
    let (col, label_tok) = toks.next().expect("line is not blank");
    let label: f64 = label_tok
        .parse()
        .map_err(|_| err(col, format!("invalid label `{label_tok}`")))?;
    if !label.is_finite() {
        return Err(err(col, format!("non-finite label `{label_tok}`")));
    }
    let mut features: Vec<(usize, f64)> = Vec::new();
    for (col, tok) in toks {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| err(col, format!("expected `index:value`, found `{tok}`")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| err(col, format!("invalid index `{idx}`")))?;
        if idx == 0 {
            return Err(err(col, "indices are 1-based".into()));
        }
        let val_col = col + tok.find(':').unwrap() + 1;
        let val: f64 = val
            .parse()
            .map_err(|_| err(val_col, format!("invalid value `{val}`")))?;
        if !val.is_finite() {
            return Err(err(val_col, format!("non-finite value `{val}`")));
        }
        if let Some(&(prev, _)) = features.last() {
            if idx - 1 <= prev {
                return Err(err(
                    col,
                    format!("index {idx} does not increase past {}", prev + 1),
                ));
            }
        }
        features.push((idx - 1, val));
    }
    Ok(SparseSample { label, features })
}

/// Formats samples so that [`parse_libsvm_str`] recovers them bit for bit.
pub fn write_libsvm(samples: &[SparseSample]) -> String {
    let mut out = String::new();
    for s in samples {
        write!(out, "{}", s.label).unwrap();
        for &(k, v) in &s.features {
            write!(out, " {}:{}", k + 1, v).unwrap();
        }
        out.push('\n');
    }
    out
}
