//! Schedules as CSV: `n,t,v1,…,vm` with `t = n Δt` the start of step `n`.
//!
//! A leading `# dt=<value>` comment records the step exactly; without it the
//! step is inferred from the time column.

use std::fmt::Write as _;
use std::path::Path;

use super::series::{csv_error, parse_f64};
use crate::error::{Error, Result};
use crate::schedule::{CoefficientArray, ControlSchedule};

pub fn schedule_to_csv_string(schedule: &ControlSchedule) -> String {
    let m = schedule.num_modes();
    let mut out = format!("# dt={}\nn,t", schedule.dt);
    for i in 1..=m {
        let _ = write!(out, ",v{i}");
    }
    out.push('\n');
    for n in 0..schedule.num_steps() {
        let _ = write!(out, "{n},{}", schedule.time(n));
        for v in schedule.coeffs.step(n) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_schedule_csv(schedule: &ControlSchedule, path: &Path) -> Result<()> {
    std::fs::write(path, schedule_to_csv_string(schedule))?;
    Ok(())
}

pub fn parse_schedule_csv(text: &str) -> Result<ControlSchedule> {
    let (dt_declared, body, offset) = match text.strip_prefix("# dt=") {
        Some(rest) => {
            let (value, body) = rest.split_once('\n').unwrap_or((rest, ""));
            (Some(parse_f64(value, 1)?), body, 1)
        }
        None => (None, text, 0),
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(offset + 1, e))?.clone();
    let m = headers.len().saturating_sub(2);
    let expected: Vec<String> = ["n".to_string(), "t".to_string()].into_iter().chain((1..=m).map(|i| format!("v{i}"))).collect();
    if m == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse { line: offset + 1, message: "expected header `n,t,v1,…,vm`".into() });
    }
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = offset + i + 2;
        let record = record.map_err(|e| csv_error(line, e))?;
        if record[0].trim() != i.to_string() {
            return Err(Error::Parse { line, message: format!("expected step index {i}") });
        }
        times.push(parse_f64(&record[1], line)?);
        for k in 0..m {
            let v = parse_f64(&record[2 + k], line)?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: "non-finite coefficient".into() });
            }
            data.push(v);
        }
    }
    let n_steps = times.len();
    if n_steps == 0 {
        return Err(Error::Parse { line: offset + 2, message: "schedule has no steps".into() });
    }
    let dt = match dt_declared {
        Some(dt) => dt,
        None if n_steps >= 2 => times[1] - times[0],
        None => return Err(Error::Parse { line: 1, message: "single-step schedule needs a `# dt=` line".into() }),
    };
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parse { line: 1, message: format!("time step {dt} is not positive") });
    }
    for (n, &t) in times.iter().enumerate() {
        if !((t - n as f64 * dt).abs() <= 1e-9 * dt.max(t.abs())) {
            return Err(Error::Parse { line: offset + n + 2, message: format!("t = {t} is not n·dt") });
        }
    }
    ControlSchedule::new(dt, CoefficientArray::from_step_major(m, n_steps, data)?)
}

pub fn read_schedule_csv(path: &Path) -> Result<ControlSchedule> {
    parse_schedule_csv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let s = ControlSchedule::trig(1e-3, 37, 3).unwrap();
        let text = schedule_to_csv_string(&s);
        assert!(text.starts_with("# dt=0.001\nn,t,v1,v2,v3\n0,0,"));
        assert_eq!(parse_schedule_csv(&text).unwrap(), s);
    }

    #[test]
    fn infers_dt_without_comment() {
        let s = parse_schedule_csv("n,t,v1\n0,0,1\n1,0.5,2\n2,1,3\n").unwrap();
        assert_eq!(s.dt, 0.5);
        assert_eq!(s.coeffs.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_malformed_input() {
        for text in [
            "",
            "n,t\n0,0\n",
            "n,t,v2\n0,0,1\n",
            "n,t,v1\n1,0,1\n",
            "n,t,v1\n0,0,1\n",
            "n,t,v1\n0,0,1\n1,0.5,x\n",
            "n,t,v1\n0,0,1\n1,0.5,2\n2,0.7,1\n",
            "# dt=-1\nn,t,v1\n0,0,1\n",
            "n,t,v1\n0,0,inf\n1,1,1\n",
        ] {
            assert!(parse_schedule_csv(text).is_err(), "{text:?}");
        }
    }
}
