//! Deterministic JSON reports.
//!
//! Floats are written as `{:.16e}` (17 significant digits), object keys are sorted, and nothing
//! depends on wall-clock time, so identical inputs give byte-identical files.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Pretty printer that writes every float in fixed 17-significant-digit scientific notation.
struct FixedFloat<'a> {
    inner: PrettyFormatter<'a>,
}

impl FixedFloat<'_> {
    fn write_float<W: ?Sized + Write>(writer: &mut W, v: f64) -> io::Result<()> {
        if v.is_finite() {
            write!(writer, "{v:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }
}

impl Formatter for FixedFloat<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        Self::write_float(writer, value)
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        Self::write_float(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

/// Serializes through a `Value` so map keys come out sorted regardless of the source type.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloat { inner: PrettyFormatter::new() });
    v.serialize(&mut ser).map_err(|e| Error::Parse(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

pub fn to_value<T: Serialize>(value: &T) -> Result<Value> {
    serde_json::to_value(value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
}

impl Environment {
    pub fn new(seed: u64) -> Self {
        Environment { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), seed }
    }
}

/// Outcome of one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRecord {
    pub name: String,
    pub verdict: bool,
    /// Headline fitted constants by name.
    pub fitted_constants: std::collections::BTreeMap<String, f64>,
    /// CSV files written next to the report.
    pub artifacts: Vec<String>,
    pub details: Value,
}

/// Top-level report: config echo, per-experiment verdicts, fitted constants, environment.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub environment: Environment,
    pub experiments: Vec<ExperimentRecord>,
    /// Set when a run aborted; the experiments above are the ones that completed.
    pub error: Option<String>,
    pub all_pass: bool,
}

impl Report {
    pub fn new(config: ExperimentConfig) -> Self {
        let environment = Environment::new(config.seed);
        Report { config, environment, experiments: Vec::new(), error: None, all_pass: true }
    }

    pub fn push(&mut self, rec: ExperimentRecord) {
        self.all_pass &= rec.verdict;
        self.experiments.push(rec);
    }

    pub fn fail(&mut self, msg: String) {
        self.all_pass = false;
        self.error = Some(msg);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_use_seventeen_digits() {
        let s = to_json_string(&json!({"b": 0.1, "a": [1.0, f64::NAN], "n": 3})).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("1.0000000000000000e0"));
        assert!(s.contains("null"));
        assert!(s.contains("\"n\": 3"));
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
    }

    #[test]
    fn round_trip_is_exact() {
        let vals = [std::f64::consts::PI, 1e-300, -2.5e17, 15.0 / 11.0];
        let s = to_json_string(&vals).unwrap();
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vals);
    }
}
