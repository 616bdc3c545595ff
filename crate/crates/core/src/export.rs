//! Plain-text output helpers: fixed-precision JSON floats and CSV tables.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;
use std::fmt::Write as _;

/// A float written to JSON with 17 significant digits (exact round trip).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Float17(pub f64);

impl Serialize for Float17 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return serializer.serialize_none();
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

/// Builds a CSV document with a fixed header. Floats use the shortest
/// representation that round-trips.
#[derive(Debug, Clone)]
pub struct CsvTable {
    text: String,
    columns: usize,
}

impl CsvTable {
    pub fn new<I, S>(header: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let cols: Vec<String> = header.into_iter().map(|s| s.as_ref().to_string()).collect();
        let mut text = cols.join(",");
        text.push('\n');
        CsvTable { text, columns: cols.len() }
    }

    pub fn push_row(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.columns, "row width does not match header");
        for (k, cell) in cells.iter().enumerate() {
            if k > 0 {
                self.text.push(',');
            }
            match cell {
                Cell::Int(v) => write!(self.text, "{v}").unwrap(),
                Cell::Float(v) => write_float(&mut self.text, *v),
                Cell::Text(v) => self.text.push_str(v),
            }
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

fn write_float(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("nan");
    } else if v.is_infinite() {
        out.push_str(if v > 0.0 { "inf" } else { "-inf" });
    } else {
        write!(out, "{v:?}").unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float17_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0] {
            let s = serde_json::to_string(&Float17(v)).unwrap();
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
            assert_eq!(s.split('e').next().unwrap().trim_start_matches('-').len(), 18);
        }
    }

    #[test]
    fn csv_rows() {
        let mut t = CsvTable::new(["location", "time"]);
        t.push_row(&[3usize.into(), 0.25.into()]);
        t.push_row(&[0usize.into(), f64::INFINITY.into()]);
        assert_eq!(t.as_str(), "location,time\n3,0.25\n0,inf\n");
    }
}
