//! Latency comparison reports: one row per model or workload with baseline
//! and optimized latencies and the speedup `baseline / ours`. A missing
//! baseline renders as `---`.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::files::{read_text, FileError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{name}: latency {value} is not a positive number")]
    NonPositive { name: String, value: f64 },
    #[error("`{0}` has a baseline but no measurement of ours")]
    MissingOurs(String),
    #[error(transparent)]
    File(#[from] FileError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub name: String,
    pub baseline_ms: Option<f64>,
    pub ours_ms: f64,
}

impl BenchRow {
    pub fn speedup(&self) -> Option<f64> {
        self.baseline_ms.map(|b| b / self.ours_ms)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchMeta {
    pub device_tag: Option<String>,
    pub seed: Option<u64>,
    pub date: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub meta: BenchMeta,
}

fn check(name: &str, v: f64) -> Result<(), BenchError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(BenchError::NonPositive { name: name.into(), value: v })
    }
}

/// Speedup printed with `precision` decimals.
pub fn format_speedup(baseline_ms: f64, ours_ms: f64, precision: usize) -> String {
    format!("{:.precision$}", baseline_ms / ours_ms)
}

impl BenchReport {
    pub fn new(rows: Vec<BenchRow>, meta: BenchMeta) -> Result<Self, BenchError> {
        for r in &rows {
            check(&r.name, r.ours_ms)?;
            if let Some(b) = r.baseline_ms {
                check(&r.name, b)?;
            }
        }
        Ok(BenchReport { rows, meta })
    }

    /// Rows for every name in `ours`, in name order, matched with `baseline`.
    pub fn paired(
        baseline: &BTreeMap<String, f64>,
        ours: &BTreeMap<String, f64>,
        meta: BenchMeta,
    ) -> Result<Self, BenchError> {
        if let Some(name) = baseline.keys().find(|k| !ours.contains_key(*k)) {
            return Err(BenchError::MissingOurs(name.clone()));
        }
        let rows = ours
            .iter()
            .map(|(name, &o)| BenchRow { name: name.clone(), baseline_ms: baseline.get(name).copied(), ours_ms: o })
            .collect();
        Self::new(rows, meta)
    }

    fn cells(&self, precision: usize) -> Vec<[String; 4]> {
        self.rows
            .iter()
            .map(|r| {
                let dash = || "---".to_string();
                [
                    r.name.clone(),
                    r.baseline_ms.map_or_else(dash, |b| b.to_string()),
                    r.ours_ms.to_string(),
                    r.baseline_ms.map_or_else(dash, |b| format_speedup(b, r.ours_ms, precision)),
                ]
            })
            .collect()
    }

    fn meta_line(&self) -> Option<String> {
        let m = &self.meta;
        let mut parts = Vec::new();
        if let Some(d) = &m.device_tag {
            parts.push(format!("device={d}"));
        }
        if let Some(s) = m.seed {
            parts.push(format!("seed={s}"));
        }
        if let Some(d) = &m.date {
            parts.push(format!("date={d}"));
        }
        (!parts.is_empty()).then(|| format!("# {}", parts.join(" ")))
    }

    pub fn render(&self, format: Format, precision: usize) -> String {
        const HEADER: [&str; 4] = ["model", "baseline_ms", "ours_ms", "speedup"];
        let cells = self.cells(precision);
        let mut out = String::new();
        if let Some(m) = self.meta_line() {
            out.push_str(&m);
            out.push('\n');
        }
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(HEADER).expect("in-memory csv write");
                for row in &cells {
                    w.write_record(row).expect("in-memory csv write");
                }
                let bytes = w.into_inner().expect("in-memory csv flush");
                out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
            }
            Format::Text => {
                let mut width = HEADER.map(str::len);
                for row in &cells {
                    for (w, c) in width.iter_mut().zip(row) {
                        *w = (*w).max(c.len());
                    }
                }
                let line = |row: [&str; 4]| {
                    let mut s = format!("{:<w$}", row[0], w = width[0]);
                    for i in 1..4 {
                        s.push_str(&format!("  {:>w$}", row[i], w = width[i]));
                    }
                    s.push('\n');
                    s
                };
                out.push_str(&line(HEADER));
                for row in &cells {
                    out.push_str(&line([&row[0], &row[1], &row[2], &row[3]]));
                }
            }
        }
        out
    }
}

/// Reads `{name: latency_ms}`.
pub fn read_latencies(path: &Path) -> Result<BTreeMap<String, f64>, FileError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| FileError::json(path, e))
}
