use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Format;
use crate::error::CliError;

/// Numeric table written as CSV or as JSON `{columns, rows}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    #[serde(skip)]
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            for (i, x) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                write_number(&mut s, *x);
            }
            s.push('\n');
        }
        s
    }
}

/// Shortest round-trip form, in exponent notation for very small or large magnitudes.
fn write_number(s: &mut String, x: f64) {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        write!(s, "{x:e}").expect("write to string");
    } else {
        write!(s, "{x}").expect("write to string");
    }
}

/// Writes artifacts into one directory and remembers their names for the manifest.
pub struct Artifacts {
    dir: PathBuf,
    format: Format,
    pub written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path, format: Format) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            written: Vec::new(),
        })
    }

    fn put(&mut self, file: String, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(&file);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.written.push(file);
        Ok(())
    }

    pub fn table(&mut self, t: &Table) -> Result<(), CliError> {
        match self.format {
            Format::Csv => self.put(format!("{}.csv", t.name), &t.to_csv()),
            Format::Json => self.put(format!("{}.json", t.name), &to_json(t)),
        }
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<(), CliError> {
        self.put(format!("{name}.json"), &to_json(value))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub fn to_json<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new("x", &["alpha_L", "eta"]);
        t.push(vec![0.0, 0.5]);
        t.push(vec![2.0, 0.541]);
        t.push(vec![4.5e-12, -1e20]);
        assert_eq!(t.to_csv(), "alpha_L,eta\n0,0.5\n2,0.541\n4.5e-12,-1e20\n");
    }
}
