//! Field snapshots as `x,y,value` CSV, one row per cell in id order.
//!
//! The first line is a comment naming the mesh, its `h` and the sample time:
//! `# mesh=cartesian(2x2) h=0.5 t=0`.

use std::fmt::Write as _;
use std::path::Path;

use super::series::{csv_error, parse_f64};
use crate::error::{Error, Result};
use crate::state::StateVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub mesh: String,
    pub h: f64,
    pub t: f64,
    /// `(x, y, value)` per cell.
    pub rows: Vec<[f64; 3]>,
}

impl Snapshot {
    pub fn from_state(theta: &StateVector, t: f64) -> Self {
        let mesh = theta.mesh();
        let rows = mesh.cells().iter().zip(theta.values()).map(|(c, &v)| [c.centroid[0], c.centroid[1], v]).collect();
        Self { mesh: mesh.kind().to_string(), h: mesh.h(), t, rows }
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[2]).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("# mesh={} h={} t={}\nx,y,value\n", self.mesh, self.h, self.t);
        for [x, y, v] in &self.rows {
            let _ = writeln!(out, "{x},{y},{v}");
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let (first, rest) = text.split_once('\n').ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let meta = first.strip_prefix("# ").ok_or(Error::Parse { line: 1, message: "expected `# mesh=… h=… t=…`".into() })?;
        let (mut mesh, mut h, mut t) = (None, None, None);
        for token in meta.split_whitespace() {
            match token.split_once('=') {
                Some(("mesh", v)) => mesh = Some(v.to_string()),
                Some(("h", v)) => h = Some(parse_f64(v, 1)?),
                Some(("t", v)) => t = Some(parse_f64(v, 1)?),
                _ => return Err(Error::Parse { line: 1, message: format!("unexpected header token `{token}`") }),
            }
        }
        let missing = |k: &str| Error::Parse { line: 1, message: format!("header lacks `{k}=`") };
        let (mesh, h, t) = (mesh.ok_or_else(|| missing("mesh"))?, h.ok_or_else(|| missing("h"))?, t.ok_or_else(|| missing("t"))?);

        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let headers = reader.headers().map_err(|e| csv_error(2, e))?.clone();
        if headers.iter().ne(["x", "y", "value"]) {
            return Err(Error::Parse { line: 2, message: "expected column header `x,y,value`".into() });
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 3;
            let record = record.map_err(|e| csv_error(line, e))?;
            if record.len() != 3 {
                return Err(Error::Parse { line, message: "expected 3 fields".into() });
            }
            rows.push([parse_f64(&record[0], line)?, parse_f64(&record[1], line)?, parse_f64(&record[2], line)?]);
        }
        Ok(Self { mesh, h, t, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }
}

/// Writes `theta` at time `t` to `path`.
pub fn emit_snapshot(theta: &StateVector, t: f64, path: &Path) -> Result<()> {
    std::fs::write(path, Snapshot::from_state(theta, t).to_csv_string())?;
    Ok(())
}

/// `snapshot_t<t>.csv`.
pub fn snapshot_file_name(t: f64) -> String {
    format!("snapshot_t{t}.csv")
}
