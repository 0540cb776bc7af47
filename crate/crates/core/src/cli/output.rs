//! CSV emission. Every file starts with a `#` provenance line, then a
//! header row.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{LsboError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!(
            "# config_hash={} seed={} version={}",
            self.config_hash, self.seed, VERSION
        )
    }
}

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path, prov: &Provenance) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| LsboError::io(dir, e))?;
        }
        let mut buf = Vec::new();
        writeln!(buf, "{}", prov.line()).expect("writing to memory");
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let io = |e: csv::Error| LsboError::Format {
                path: path.to_path_buf(),
                detail: e.to_string(),
            };
            w.write_record(&self.header).map_err(io)?;
            for r in &self.rows {
                w.write_record(r).map_err(io)?;
            }
            w.flush().map_err(|e| LsboError::io(path, e))?;
        }
        fs::write(path, buf).map_err(|e| LsboError::io(path, e))
    }
}

/// Read a table written by [`Table::write`], returning the header and rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| LsboError::io(path, e))?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let bad = |e: csv::Error| LsboError::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let header = r.headers().map_err(bad)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(bad))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
