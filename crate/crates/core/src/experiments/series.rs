//! Per-step diagnostics and their CSV form.
//!
//! The header is `t,mix_norm,mass_drift,energy_drift_rel,pairing_drift_rel`.
//! `mix_norm` is left empty on steps where it was not sampled. Floats are
//! written in shortest round-trip form, so output is byte-stable.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SERIES_HEADER: [&str; 5] = ["t", "mix_norm", "mass_drift", "energy_drift_rel", "pairing_drift_rel"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub mix_norm: Option<f64>,
    pub mass_drift: f64,
    pub energy_drift_rel: f64,
    pub pairing_drift_rel: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub rows: Vec<SeriesRow>,
}

/// Largest value of each drift column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftMaxima {
    pub mass: f64,
    pub energy_rel: f64,
    pub pairing_rel: f64,
}

impl TimeSeries {
    /// `t` strictly increasing and every drift finite.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if !(r.t.is_finite() && r.mass_drift.is_finite() && r.energy_drift_rel.is_finite() && r.pairing_drift_rel.is_finite()) {
                return Err(Error::Parse { line: i + 2, message: "non-finite entry".into() });
            }
            if r.mix_norm.is_some_and(|m| !m.is_finite()) {
                return Err(Error::Parse { line: i + 2, message: "non-finite mix-norm".into() });
            }
            if i > 0 && !(r.t > self.rows[i - 1].t) {
                return Err(Error::Parse { line: i + 2, message: "time column is not strictly increasing".into() });
            }
        }
        Ok(())
    }

    pub fn drift_maxima(&self) -> DriftMaxima {
        self.rows.iter().fold(DriftMaxima::default(), |m, r| DriftMaxima {
            mass: m.mass.max(r.mass_drift),
            energy_rel: m.energy_rel.max(r.energy_drift_rel),
            pairing_rel: m.pairing_rel.max(r.pairing_drift_rel),
        })
    }

    /// `(t, mix_norm)` for the sampled rows.
    pub fn mix_samples(&self) -> Vec<(f64, f64)> {
        self.rows.iter().filter_map(|r| r.mix_norm.map(|m| (r.t, m))).collect()
    }

    pub fn initial_mix_norm(&self) -> Option<f64> {
        self.mix_samples().first().map(|s| s.1)
    }

    pub fn final_mix_norm(&self) -> Option<f64> {
        self.mix_samples().last().map(|s| s.1)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = SERIES_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let mix = r.mix_norm.map(|m| m.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.t, mix, r.mass_drift, r.energy_drift_rel, r.pairing_drift_rel);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| csv_error(1, e))?.clone();
        if headers.iter().ne(SERIES_HEADER) {
            return Err(Error::Parse { line: 1, message: format!("expected header {}", SERIES_HEADER.join(",")) });
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| csv_error(line, e))?;
            let num = |k: usize| parse_f64(&record[k], line);
            let mix = if record[1].is_empty() { None } else { Some(num(1)?) };
            rows.push(SeriesRow { t: num(0)?, mix_norm: mix, mass_drift: num(2)?, energy_drift_rel: num(3)?, pairing_drift_rel: num(4)? });
        }
        let series = Self { rows };
        series.validate()?;
        Ok(series)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse { line, message: format!("`{field}` is not a number") })
}

pub(crate) fn csv_error(line: usize, e: csv::Error) -> Error {
    let line = e.position().map_or(line, |p| p.line() as usize);
    Error::Parse { line, message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TimeSeries {
        TimeSeries {
            rows: vec![
                SeriesRow { t: 0.0, mix_norm: Some(0.1125), mass_drift: 0.0, energy_drift_rel: 0.0, pairing_drift_rel: 0.0 },
                SeriesRow { t: 0.001, mix_norm: None, mass_drift: 1e-17, energy_drift_rel: 3.3e-14, pairing_drift_rel: 2e-15 },
                SeriesRow { t: 0.002, mix_norm: Some(0.1 / 3.0), mass_drift: 2e-17, energy_drift_rel: 6.1e-14, pairing_drift_rel: 1e-15 },
            ],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = sample();
        let text = s.to_csv_string();
        assert!(text.starts_with("t,mix_norm,mass_drift,energy_drift_rel,pairing_drift_rel\n"));
        assert!(text.lines().nth(2).unwrap().starts_with("0.001,,"));
        assert_eq!(TimeSeries::parse_csv(&text).unwrap(), s);
        assert_eq!(s.final_mix_norm(), Some(0.1 / 3.0));
        assert_eq!(s.drift_maxima().energy_rel, 6.1e-14);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(TimeSeries::parse_csv("a,b\n1,2\n").is_err());
        assert!(TimeSeries::parse_csv("t,mix_norm,mass_drift,energy_drift_rel,pairing_drift_rel\n0,x,0,0,0\n").is_err());
        assert!(TimeSeries::parse_csv("t,mix_norm,mass_drift,energy_drift_rel,pairing_drift_rel\n1,,0,0,0\n0,,0,0,0\n").is_err());
        assert!(TimeSeries::parse_csv("t,mix_norm,mass_drift,energy_drift_rel,pairing_drift_rel\n0,,0,0\n").is_err());
        assert!(TimeSeries::parse_csv("t,mix_norm,mass_drift,energy_drift_rel,pairing_drift_rel\n0,,NaN,0,0\n").is_err());
    }
}
