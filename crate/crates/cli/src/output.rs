//! Output directory: tables in CSV or JSON, JSON documents, raw files and the
//! run manifest. Every file is rendered in memory, read back and compared
//! before it is moved into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:?}"),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) => Value::from(*v),
            Cell::Text(s) => Value::from(s.as_str()),
            Cell::Bool(b) => Value::from(*b),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

/// Column-oriented table. JSON form is `{"columns": [...], "rows": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &'static str, columns: &[&'static str]) -> Self {
        Table {
            name,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn check_finite(&self) -> CliResult<()> {
        for (r, row) in self.rows.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if let Cell::Num(v) = cell {
                    if !v.is_finite() {
                        return Err(CliError::bad_input(format!(
                            "{}: non-finite value in column {} of row {}",
                            self.name,
                            self.columns[c],
                            r + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn to_csv(&self) -> CliResult<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::bad_input(e.to_string());
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).map_err(io)?;
        }
        w.into_inner().map_err(|e| CliError::bad_input(e.to_string()))
    }

    fn check_csv(&self, bytes: &[u8]) -> CliResult<()> {
        let mut r = csv::Reader::from_reader(bytes);
        let header: Vec<String> = r
            .headers()
            .map_err(|e| CliError::bad_input(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != self.columns {
            return Err(round_trip(self.name));
        }
        let mut n = 0;
        for (rec, row) in r.records().zip(&self.rows) {
            let rec = rec.map_err(|e| CliError::bad_input(e.to_string()))?;
            let same = rec.len() == row.len()
                && rec.iter().zip(row).all(|(s, cell)| match cell {
                    Cell::Num(v) => s.parse::<f64>().is_ok_and(|x| x.to_bits() == v.to_bits()),
                    other => s == other.csv(),
                });
            if !same {
                return Err(round_trip(self.name));
            }
            n += 1;
        }
        if n != self.rows.len() {
            return Err(round_trip(self.name));
        }
        Ok(())
    }

    fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Array(r.iter().map(Cell::json).collect()))
            .collect();
        serde_json::json!({ "columns": self.columns, "rows": rows })
    }
}

fn round_trip(name: &str) -> CliError {
    CliError::bad_input(format!("{name}: written file does not read back identically"))
}

/// Input file recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRef {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl InputRef {
    pub fn of(path: &Path, data: &[u8]) -> Self {
        InputRef {
            path: fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()),
            sha256: sha256_hex(data),
            bytes: data.len() as u64,
        }
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    format!("{:x}", Sha256::digest(data))
}

/// Everything needed to rerun a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub format: Format,
    pub seed: u64,
    /// Fully resolved configuration, defaults filled in.
    pub config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputRef>,
    pub outputs: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

pub struct Sink {
    dir: PathBuf,
    pub format: Format,
    pub written: Vec<String>,
}

impl Sink {
    pub fn new(dir: &Path, format: Format) -> CliResult<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::bad_input(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            format,
            written: Vec::new(),
        })
    }

    fn commit(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let target = self.dir.join(name);
        let fail = |e: std::io::Error| CliError::bad_input(format!("writing {}: {e}", target.display()));
        let mut tmp = NamedTempFile::new_in(&self.dir).map_err(fail)?;
        tmp.write_all(bytes).map_err(fail)?;
        tmp.as_file().sync_all().map_err(fail)?;
        // temp files are created owner-only
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644)).map_err(fail)?;
        }
        tmp.persist(&target).map_err(|e| fail(e.error))?;
        if name != MANIFEST {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    /// Write `bytes` after `check` confirms they parse back to the intended value.
    pub fn file(&mut self, name: &str, bytes: Vec<u8>, check: impl FnOnce(&[u8]) -> bool) -> CliResult<()> {
        if !check(&bytes) {
            return Err(round_trip(name));
        }
        self.commit(name, &bytes)
    }

    pub fn table(&mut self, t: &Table) -> CliResult<()> {
        t.check_finite()?;
        match self.format {
            Format::Csv => {
                let bytes = t.to_csv()?;
                t.check_csv(&bytes)?;
                self.commit(&format!("{}.csv", t.name), &bytes)
            }
            Format::Json => self.json_value(&format!("{}.json", t.name), t.to_json()),
        }
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let v = serde_json::to_value(value).map_err(|e| CliError::bad_input(format!("{name}: {e}")))?;
        self.json_value(name, v)
    }

    fn json_value(&mut self, name: &str, v: Value) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(&v).map_err(|e| CliError::bad_input(format!("{name}: {e}")))?;
        bytes.push(b'\n');
        let back: Value = serde_json::from_slice(&bytes).map_err(|e| CliError::bad_input(format!("{name}: {e}")))?;
        if back != v {
            return Err(round_trip(name));
        }
        self.commit(name, &bytes)
    }

    pub fn manifest(&mut self, m: &Manifest) -> CliResult<()> {
        let v = serde_json::to_value(m).map_err(|e| CliError::bad_input(e.to_string()))?;
        self.json_value(MANIFEST, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        let mut t = Table::new("t", &["x_GHz", "label", "flag", "maybe"]);
        t.push(vec![Cell::Num(1e-7), "a,b".into(), true.into(), Cell::Empty]);
        t.push(vec![Cell::Num(4.811_123_456_789), "\"q\"".into(), false.into(), Cell::Num(-0.0)]);
        t
    }

    #[test]
    fn csv_round_trips_exactly() {
        let t = sample();
        let bytes = t.to_csv().unwrap();
        t.check_csv(&bytes).unwrap();
        let mut altered = t.clone();
        altered.rows[1][0] = Cell::Num(4.811_123_456_788);
        assert!(altered.check_csv(&bytes).is_err());
    }

    #[test]
    fn non_finite_values_are_refused() {
        let mut t = sample();
        t.rows[0][0] = Cell::Num(f64::NAN);
        let dir = tempfile::tempdir().unwrap();
        let mut sink = Sink::new(dir.path(), Format::Csv).unwrap();
        assert!(sink.table(&t).is_err());
        assert!(sink.written.is_empty());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn json_table_keeps_column_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = Sink::new(dir.path(), Format::Json).unwrap();
        sink.table(&sample()).unwrap();
        let v: Value = serde_json::from_slice(&fs::read(dir.path().join("t.json")).unwrap()).unwrap();
        assert_eq!(v["columns"][0], "x_GHz");
        assert_eq!(v["rows"][0][3], Value::Null);
        assert_eq!(sink.written, vec!["t.json"]);
    }
}
