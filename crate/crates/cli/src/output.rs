//! CSV tables with round-trip float formatting, and their digests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(n) => n.to_string(),
            // 17 significant digits round-trip every f64
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Int(n)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Int(u64::from(b))
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: impl Into<String>, header: &[&'static str]) -> Self {
        Self {
            file: file.into(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width in {}", self.file);
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| CliError::io("flushing csv")(e.into_error()))
    }
}

/// Digest entry for one output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_table(dir: &Path, table: &Table) -> CliResult<FileDigest> {
    let bytes = table.to_bytes()?;
    let path = dir.join(&table.file);
    std::fs::write(&path, &bytes).map_err(CliError::io(format!("writing {}", path.display())))?;
    Ok(FileDigest {
        file: table.file.clone(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Read a two-column numeric CSV with a header row.
pub fn read_pairs(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> CliResult<f64> {
            rec.get(k).and_then(|x| x.trim().parse().ok()).ok_or_else(|| {
                CliError::config(
                    "forcing_csv",
                    format!("{}: row {} needs two numeric columns", path.display(), i + 1),
                )
            })
        };
        if rec.len() != 2 {
            return Err(CliError::config(
                "forcing_csv",
                format!("{}: row {} has {} columns", path.display(), i + 1, rec.len()),
            ));
        }
        a.push(parse(0)?);
        b.push(parse(1)?);
    }
    Ok((a, b))
}

/// Compact label for a level in file names: `100`, `0.5`, `1e+300`.
pub fn s_label(s: f64) -> String {
    format!("{s}")
}
