//! CSV / JSON emission for experiment records.
//!
//! Floats go to CSV with 17 significant digits so values re-parse exactly.
//! JSON objects carry the same keys as the CSV header, in the same order.

use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::Result;
use crate::harness::{AccuracyRecord, SerRecord, SweepRecord, TimingRecord};
use crate::verify::PropertyCheck;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Str(String),
    Int(u64),
    Float(f64),
}

impl Cell {
    fn to_csv(&self) -> String {
        match self {
            Cell::Str(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format_float(*x),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Str(s) => Value::String(s.clone()),
            Cell::Int(i) => Value::from(*i),
            Cell::Float(x) => serde_json::Number::from_f64(*x).map(Value::Number).unwrap_or(Value::Null),
        }
    }
}

/// 17 significant digits, scientific notation.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub trait Tabular {
    fn header() -> &'static [&'static str];
    fn cells(&self) -> Vec<Cell>;
}

fn s(x: impl ToString) -> Cell {
    Cell::Str(x.to_string())
}

fn i(x: usize) -> Cell {
    Cell::Int(x as u64)
}

fn f(x: f64) -> Cell {
    Cell::Float(x)
}

impl Tabular for SweepRecord {
    fn header() -> &'static [&'static str] {
        &["scheme", "K", "N", "M", "sinr_db", "mean_power_dbw", "mean_ms_per_slot", "n_samples", "seed"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            s(self.scheme),
            i(self.k),
            i(self.n),
            i(self.m),
            f(self.sinr_db),
            f(self.mean_power_dbw),
            f(self.mean_ms_per_slot),
            i(self.n_samples),
            Cell::Int(self.seed),
        ]
    }
}

impl Tabular for AccuracyRecord {
    fn header() -> &'static [&'static str] {
        &["K", "N", "M", "sinr_db", "accuracy_mean", "n_samples", "seed"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            i(self.k),
            i(self.n),
            i(self.m),
            f(self.sinr_db),
            f(self.accuracy_mean),
            i(self.n_samples),
            Cell::Int(self.seed),
        ]
    }
}

impl Tabular for TimingRecord {
    fn header() -> &'static [&'static str] {
        &["scheme", "K", "N", "M", "median_ms_per_slot", "mean_ms_per_slot", "batch", "n_samples", "seed"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            s(self.scheme),
            i(self.k),
            i(self.n),
            i(self.m),
            f(self.median_ms_per_slot),
            f(self.mean_ms_per_slot),
            i(self.batch),
            i(self.n_samples),
            Cell::Int(self.seed),
        ]
    }
}

impl Tabular for SerRecord {
    fn header() -> &'static [&'static str] {
        &["scheme", "K", "N", "M", "sinr_db", "noise_scale", "ser", "std_err", "n_symbols", "seed"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            s(self.scheme),
            i(self.k),
            i(self.n),
            i(self.m),
            f(self.sinr_db),
            f(self.noise_scale),
            f(self.ser),
            f(self.std_err),
            i(self.n_symbols),
            Cell::Int(self.seed),
        ]
    }
}

impl Tabular for PropertyCheck {
    fn header() -> &'static [&'static str] {
        &["property", "passed", "checked", "failures", "worst"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![s(self.name), s(self.passed()), i(self.checked), i(self.failures), f(self.worst)]
    }
}

pub fn to_csv<T: Tabular>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(T::header()).map_err(std::io::Error::other)?;
    for r in rows {
        w.write_record(r.cells().iter().map(Cell::to_csv)).map_err(std::io::Error::other)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json<T: Tabular>(rows: &[T]) -> String {
    let arr: Vec<Value> = rows
        .iter()
        .map(|r| {
            let mut m = Map::new();
            for (k, c) in T::header().iter().zip(r.cells()) {
                m.insert((*k).to_string(), c.to_json());
            }
            Value::Object(m)
        })
        .collect();
    serde_json::to_string_pretty(&Value::Array(arr)).expect("json serialises") + "\n"
}

pub fn render<T: Tabular>(rows: &[T], format: Format) -> Result<String> {
    match format {
        Format::Csv => to_csv(rows),
        Format::Json => Ok(to_json(rows)),
    }
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Reads back a CSV produced by [`to_csv`] as header plus string rows.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(std::io::Error::other)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(std::io::Error::other)?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}
