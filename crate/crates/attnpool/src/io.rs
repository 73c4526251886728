//! CSV files: hub forecasts and truth, Lorenz trajectories, and report tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use attnpool_core::covid::{Day, ForecastRecord, TruthRecord};
use attnpool_core::lorenz::{State, Trajectory};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// `line` is 1-based and counts the header.
    #[error("{path}, line {line}: {message}")]
    Row {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Line number of the `index`-th data record of a file with a header row.
pub fn record_line(index: usize) -> usize {
    index + 2
}

fn reader(path: &Path) -> Result<csv::Reader<File>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(
    rdr: &mut csv::Reader<File>,
    path: &Path,
    expected: &[&str],
) -> Result<bool, DataError> {
    let headers = rdr.headers().map_err(|e| DataError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if headers.is_empty() {
        return Ok(false);
    }
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            message: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    Ok(true)
}

fn row_error(path: &Path, e: &csv::Error, fallback: usize) -> DataError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(fallback);
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    DataError::Row {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn parse_day(path: &Path, line: usize, s: &str) -> Result<Day, DataError> {
    s.parse().map_err(|_| DataError::Row {
        path: path.to_path_buf(),
        line,
        message: format!("expected a YYYY-MM-DD date, got {s:?}"),
    })
}

#[derive(Deserialize)]
struct ForecastRow {
    model: String,
    location: String,
    target_end_date: String,
    quantile: f64,
    value: f64,
}

#[derive(Deserialize)]
struct TruthRow {
    location: String,
    week_ending: String,
    inc_death: f64,
}

pub const FORECAST_HEADER: [&str; 5] =
    ["model", "location", "target_end_date", "quantile", "value"];
pub const TRUTH_HEADER: [&str; 3] = ["location", "week_ending", "inc_death"];

/// Reads a hub forecast file. An empty file yields no records.
pub fn read_forecasts(path: &Path) -> Result<Vec<ForecastRecord>, DataError> {
    let mut rdr = reader(path)?;
    if !check_header(&mut rdr, path, &FORECAST_HEADER)? {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ForecastRow>().enumerate() {
        let line = record_line(i);
        let row = row.map_err(|e| row_error(path, &e, line))?;
        out.push(ForecastRecord {
            model: row.model,
            location: row.location,
            target_end_date: parse_day(path, line, &row.target_end_date)?,
            quantile: row.quantile,
            value: row.value,
        });
    }
    Ok(out)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>, DataError> {
    let mut rdr = reader(path)?;
    if !check_header(&mut rdr, path, &TRUTH_HEADER)? {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<TruthRow>().enumerate() {
        let line = record_line(i);
        let row = row.map_err(|e| row_error(path, &e, line))?;
        out.push(TruthRecord {
            location: row.location,
            week_ending: parse_day(path, line, &row.week_ending)?,
            value: row.inc_death,
        });
    }
    Ok(out)
}

/// Buffered CSV table writer. Floats are written in shortest round-trip form.
pub struct CsvTable {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvTable {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, DataError> {
        let file = File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut t = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        t.row(header)?;
        Ok(t)
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<(), DataError> {
        let mut line = String::new();
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            let f = f.as_ref();
            if f.contains([',', '"', '\n']) {
                line.push('"');
                line.push_str(&f.replace('"', "\"\""));
                line.push('"');
            } else {
                line.push_str(f);
            }
        }
        line.push('\n');
        self.out
            .write_all(line.as_bytes())
            .map_err(|e| DataError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), DataError> {
        self.out.flush().map_err(|e| DataError::io(&self.path, e))
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_forecasts(path: &Path, records: &[ForecastRecord]) -> Result<(), DataError> {
    let mut t = CsvTable::create(path, &FORECAST_HEADER)?;
    for r in records {
        t.row(&[
            r.model.clone(),
            r.location.clone(),
            r.target_end_date.to_string(),
            num(r.quantile),
            num(r.value),
        ])?;
    }
    t.finish()
}

pub fn write_truth(path: &Path, records: &[TruthRecord]) -> Result<(), DataError> {
    let mut t = CsvTable::create(path, &TRUTH_HEADER)?;
    for r in records {
        t.row(&[r.location.clone(), r.week_ending.to_string(), num(r.value)])?;
    }
    t.finish()
}

pub const TRAJECTORY_HEADER: [&str; 4] = ["t", "u1", "u2", "u3"];

pub fn write_trajectory(path: &Path, tr: &Trajectory) -> Result<(), DataError> {
    let mut t = CsvTable::create(path, &TRAJECTORY_HEADER)?;
    for (j, s) in tr.states.iter().enumerate() {
        t.row(&[num(tr.time(j)), num(s[0]), num(s[1]), num(s[2])])?;
    }
    t.finish()
}

#[derive(Deserialize)]
struct TrajectoryRow {
    t: f64,
    u1: f64,
    u2: f64,
    u3: f64,
}

/// Reads a trajectory written by [`write_trajectory`]; sampling must be uniform.
pub fn read_trajectory(path: &Path, dt: f64) -> Result<Trajectory, DataError> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &TRAJECTORY_HEADER)?;
    let mut states: Vec<State> = Vec::new();
    let mut t0 = 0.0;
    for (i, row) in rdr.deserialize::<TrajectoryRow>().enumerate() {
        let line = record_line(i);
        let row = row.map_err(|e| row_error(path, &e, line))?;
        if i == 0 {
            t0 = row.t;
        }
        let expected = t0 + i as f64 * dt;
        if (row.t - expected).abs() > 1e-9 * expected.abs().max(1.0) {
            return Err(DataError::Row {
                path: path.to_path_buf(),
                line,
                message: format!(
                    "time {} breaks uniform sampling (expected {expected})",
                    row.t
                ),
            });
        }
        let s = [row.u1, row.u2, row.u3];
        if !s.iter().all(|v| v.is_finite()) {
            return Err(DataError::Row {
                path: path.to_path_buf(),
                line,
                message: "non-finite state".into(),
            });
        }
        states.push(s);
    }
    Ok(Trajectory { t0, dt, states })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DataError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| DataError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
