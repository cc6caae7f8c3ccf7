//! Logged simulation rows and their CSV representation.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so a trace written twice from the same run is
//! byte-identical and a trace read back equals the one written.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{EventLog, TriggerSide};

/// One logged row of a closed-loop run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub s: f64,
    pub qc: f64,
    #[serde(rename = "U_applied")]
    pub u_applied: f64,
    #[serde(rename = "U_star")]
    pub u_star: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h_min: f64,
    pub sdot: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "Vh")]
    pub vh: f64,
    #[serde(rename = "Vbar")]
    pub vbar: f64,
    #[serde(rename = "Phi")]
    pub phi: f64,
    /// `1` on rows where the control was updated.
    pub event_flag: u8,
}

impl TraceRecord {
    pub fn is_event(&self) -> bool {
        self.event_flag != 0
    }

    pub fn is_finite(&self) -> bool {
        [
            self.t, self.s, self.qc, self.u_applied, self.u_star, self.h1, self.h2, self.h3, self.h_min,
            self.sdot, self.v, self.vh, self.vbar, self.phi,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// A completed run: logged rows plus the full event log.
///
/// `records` may be decimated; every event row and the final row are always
/// kept. `steps` counts base steps actually taken.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub events: EventLog,
    pub steps: usize,
    /// Control updates made by the controller (equals `events.len()` for the
    /// event-triggered controller, `steps + 1` for the continuous baseline).
    pub updates: usize,
    pub dt: f64,
}

impl Trace {
    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("trace has too few records for this check")]
    EmptyTrace,
}

#[derive(Debug, Error)]
pub enum CsvIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CsvIoError + '_ {
    move |source| CsvIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CsvIoError + '_ {
    move |source| CsvIoError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Writes rows of any serializable type with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CsvIoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CsvIoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    r.deserialize().map(|row| row.map_err(csv_err(path))).collect()
}

pub fn write_trace_csv(path: &Path, records: &[TraceRecord]) -> Result<(), CsvIoError> {
    write_csv(path, records)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>, CsvIoError> {
    read_csv(path)
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    t_j: f64,
    #[serde(rename = "U_held")]
    u_held: f64,
    side: String,
    /// Empty for the first event.
    gap_to_prev: Option<f64>,
}

/// Writes `t_j, U_held, side, gap_to_prev`.
pub fn write_events_csv(path: &Path, log: &EventLog) -> Result<(), CsvIoError> {
    let rows: Vec<EventRow> = log
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| EventRow {
            t_j: e.t,
            u_held: e.u_held,
            side: e.side.name().to_string(),
            gap_to_prev: (i > 0).then(|| e.t - log.entries[i - 1].t),
        })
        .collect();
    write_csv(path, &rows)
}

pub fn read_events_csv(path: &Path) -> Result<EventLog, CsvIoError> {
    let rows: Vec<EventRow> = read_csv(path)?;
    let mut log = EventLog::default();
    for (i, row) in rows.into_iter().enumerate() {
        let side = TriggerSide::from_name(&row.side).ok_or_else(|| CsvIoError::Malformed {
            path: path.display().to_string(),
            line: i + 2,
            message: format!("unknown trigger side {:?}", row.side),
        })?;
        log.push(row.t_j, row.u_held, side);
    }
    Ok(log)
}

/// Writes a plain text file, creating or truncating it.
pub fn write_text(path: &Path, text: &str) -> Result<(), CsvIoError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
