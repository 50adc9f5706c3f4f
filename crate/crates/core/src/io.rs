//! Matrix files and run manifests.
//!
//! A matrix file is plain CSV preceded by one header line:
//!
//! ```text
//! # rows=3 cols=2 name=Y
//! 0,0
//! 1.5,-2
//! 3,1e-7
//! ```
//!
//! Values are written in shortest round-trip form, so reading a written file
//! gives back identical `f64`s.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DsneError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixName {
    X,
    V,
    Y,
    W,
}

impl MatrixName {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixName::X => "X",
            MatrixName::V => "V",
            MatrixName::Y => "Y",
            MatrixName::W => "W",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "X" => Some(MatrixName::X),
            "V" => Some(MatrixName::V),
            "Y" => Some(MatrixName::Y),
            "W" => Some(MatrixName::W),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub name: MatrixName,
    pub data: Array2<f64>,
}

fn parse_err(path: &str, line: usize, column: usize, message: impl Into<String>) -> DsneError {
    DsneError::Parse {
        path: path.to_string(),
        line,
        column,
        message: message.into(),
    }
}

fn parse_header(path: &str, line: &str) -> Result<(usize, usize, MatrixName)> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| parse_err(path, 1, 1, "expected header '# rows=N cols=M name=<X|V|Y|W>'"))?;
    let (mut rows, mut cols, mut name) = (None, None, None);
    for field in body.split_whitespace() {
        let col = line.find(field).map_or(1, |c| c + 1);
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(path, 1, col, format!("malformed header field '{field}'")))?;
        let bad = |what: &str| parse_err(path, 1, col, format!("invalid {what} '{value}'"));
        match key {
            "rows" => rows = Some(value.parse::<usize>().map_err(|_| bad("row count"))?),
            "cols" => cols = Some(value.parse::<usize>().map_err(|_| bad("column count"))?),
            "name" => name = Some(MatrixName::parse(value).ok_or_else(|| bad("matrix name"))?),
            _ => return Err(parse_err(path, 1, col, format!("unknown header field '{key}'"))),
        }
    }
    match (rows, cols, name) {
        (Some(r), Some(c), Some(n)) => Ok((r, c, n)),
        _ => Err(parse_err(path, 1, 1, "header must declare rows, cols and name")),
    }
}

/// Parses matrix text; `path` only labels diagnostics.
pub fn parse_matrix(path: &str, text: &str) -> Result<MatrixFile> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, 1, "empty file"))?;
    let (rows, cols, name) = parse_header(path, header.trim_end())?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        if seen == rows {
            return Err(parse_err(
                path,
                lineno,
                1,
                format!("more data rows than the declared {rows}"),
            ));
        }
        let mut count = 0;
        let mut column = 1;
        for field in line.split(',') {
            let token = field.trim();
            let value: f64 = token
                .parse()
                .map_err(|_| parse_err(path, lineno, column, format!("'{token}' is not a number")))?;
            if !value.is_finite() {
                return Err(parse_err(path, lineno, column, format!("non-finite value '{token}'")));
            }
            values.push(value);
            count += 1;
            column += field.len() + 1;
        }
        if count != cols {
            return Err(parse_err(
                path,
                lineno,
                1,
                format!("expected {cols} values, found {count}"),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(parse_err(
            path,
            text.lines().count() + 1,
            1,
            format!("expected {rows} data rows, found {seen}"),
        ));
    }
    let data = Array2::from_shape_vec((rows, cols), values).expect("row count checked");
    Ok(MatrixFile { name, data })
}

pub fn format_matrix(name: MatrixName, data: ArrayView2<'_, f64>) -> String {
    let (rows, cols) = data.dim();
    let mut out = format!("# rows={rows} cols={cols} name={}\n", name.as_str());
    for row in data.outer_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn io_err(path: &Path, source: std::io::Error) -> DsneError {
    DsneError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_matrix(&path.display().to_string(), &text)
}

pub fn write_matrix(path: impl AsRef<Path>, name: MatrixName, data: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_matrix(name, data)).map_err(|e| io_err(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector of the invocation.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json + "\n").map_err(|e| io_err(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| parse_err(&path.display().to_string(), e.line(), e.column(), e.to_string()))
    }
}
