//! Result rows. One fixed 23-column schema serves both output formats:
//! every sample (cell, repeat) gets a row, and each cell closes with an
//! aggregate row (`repeat` = "mean") whose metric columns are across-repeat
//! means. The header is byte-stable; schema evolution is append-only.

use crate::spec::Spec;
use cctk::harness::Metrics;
use cctk::protocols::Toggles;
use serde_json::{Map, Number, Value};
use std::fmt;

pub const HEADER: [&str; 23] = [
    "protocol",
    "toggles",
    "threads",
    "skew",
    "cardinality",
    "payload",
    "txn_size",
    "read_ratio",
    "rmw",
    "duration_s",
    "repeat",
    "commits",
    "aborts",
    "throughput_tps",
    "abort_ratio",
    "phase_read_ns",
    "phase_validation_ns",
    "phase_write_ns",
    "phase_gc_ns",
    "phase_abort_ns",
    "extra_reads",
    "live_versions_max",
    "status",
];

pub fn header_line() -> String {
    HEADER.join(",")
}

/// A single typed field. Numbers render with full (round-trip) precision
/// in both formats.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Text(v) => write!(f, "{v}"),
        }
    }
}

impl Cell {
    pub fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::Number(Number::from(*v)),
            Cell::Num(v) => Value::Number(
                Number::from_f64(*v).expect("metric values are finite"),
            ),
            Cell::Text(v) => Value::String(v.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row(pub Vec<Cell>);

impl Row {
    pub fn csv_line(&self) -> String {
        let fields: Vec<String> = self.0.iter().map(Cell::to_string).collect();
        fields.join(",")
    }

    pub fn json_object(&self) -> Value {
        let mut map = Map::new();
        for (name, cell) in HEADER.iter().zip(&self.0) {
            map.insert((*name).to_string(), cell.json());
        }
        Value::Object(map)
    }
}

fn toggles_label(names: &[String]) -> String {
    let mut toggles = Toggles::default();
    for name in names {
        toggles.set(name, true);
    }
    toggles.label()
}

/// The nine workload-identity columns shared by every row of a cell.
fn identity(spec: &Spec) -> Vec<Cell> {
    let w = &spec.workload;
    vec![
        Cell::Text(spec.protocol.clone()),
        Cell::Text(toggles_label(&spec.toggles)),
        Cell::Int(w.threads as u64),
        Cell::Num(w.skew),
        Cell::Int(w.cardinality),
        Cell::Int(w.payload_size as u64),
        Cell::Int(w.txn_size as u64),
        Cell::Int(u64::from(w.read_ratio)),
        Cell::Text(w.rmw.to_string()),
    ]
}

fn finish(mut row: Vec<Cell>, status: &str) -> Row {
    row.push(Cell::Text(status.to_string()));
    debug_assert_eq!(row.len(), HEADER.len());
    Row(row)
}

fn sample_row(spec: &Spec, repeat: usize, m: &Metrics) -> Row {
    let mut row = identity(spec);
    row.extend([
        Cell::Num(m.duration.as_secs_f64()),
        Cell::Text(repeat.to_string()),
        Cell::Int(m.commits),
        Cell::Int(m.aborts),
        Cell::Num(m.throughput()),
        Cell::Num(m.abort_ratio()),
        Cell::Int(m.phase.read),
        Cell::Int(m.phase.validation),
        Cell::Int(m.phase.write),
        Cell::Int(m.phase.gc),
        Cell::Int(m.phase.abort_retry),
        Cell::Int(m.extra_reads),
        Cell::Int(m.live_versions_max),
    ]);
    finish(row, "ok")
}

fn aggregate_row(spec: &Spec, samples: &[Metrics]) -> Row {
    let n = samples.len() as f64;
    let mean = |get: fn(&Metrics) -> f64| samples.iter().map(get).sum::<f64>() / n;
    let duration_s = mean(|m| m.duration.as_secs_f64());
    let commits = mean(|m| m.commits as f64);
    let aborts = mean(|m| m.aborts as f64);
    // Recomputed from this row's own mean columns, so the internal
    // consistency abort_ratio == aborts / (commits + aborts) holds for
    // aggregate rows exactly as it does for samples.
    let throughput = if duration_s == 0.0 { 0.0 } else { commits / duration_s };
    let attempts = commits + aborts;
    let abort_ratio = if attempts == 0.0 { 0.0 } else { aborts / attempts };

    let mut row = identity(spec);
    row.extend([
        Cell::Num(duration_s),
        Cell::Text("mean".to_string()),
        Cell::Num(commits),
        Cell::Num(aborts),
        Cell::Num(throughput),
        Cell::Num(abort_ratio),
        Cell::Num(mean(|m| m.phase.read as f64)),
        Cell::Num(mean(|m| m.phase.validation as f64)),
        Cell::Num(mean(|m| m.phase.write as f64)),
        Cell::Num(mean(|m| m.phase.gc as f64)),
        Cell::Num(mean(|m| m.phase.abort_retry as f64)),
        Cell::Num(mean(|m| m.extra_reads as f64)),
        Cell::Num(mean(|m| m.live_versions_max as f64)),
    ]);
    finish(row, "ok")
}

/// Sample rows in repeat order, then the aggregate row.
pub fn cell_rows(spec: &Spec, samples: &[Metrics]) -> Vec<Row> {
    let mut rows: Vec<Row> = samples
        .iter()
        .enumerate()
        .map(|(i, m)| sample_row(spec, i, m))
        .collect();
    rows.push(aggregate_row(spec, samples));
    rows
}

/// The single row a cell leaves behind when it cannot run: identity intact,
/// metrics zeroed, status `failed`.
pub fn failed_row(spec: &Spec) -> Row {
    let mut row = identity(spec);
    row.extend([
        Cell::Num(0.0),
        Cell::Text("mean".to_string()),
        Cell::Int(0),
        Cell::Int(0),
        Cell::Num(0.0),
        Cell::Num(0.0),
        Cell::Int(0),
        Cell::Int(0),
        Cell::Int(0),
        Cell::Int(0),
        Cell::Int(0),
        Cell::Int(0),
        Cell::Int(0),
    ]);
    finish(row, "failed")
}

pub fn render_csv(rows: &[Row]) -> String {
    let mut out = header_line();
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

pub fn render_json(rows: &[Row]) -> String {
    let objects: Vec<Value> = rows.iter().map(Row::json_object).collect();
    let mut out = serde_json::to_string_pretty(&objects).expect("rows serialize");
    out.push('\n');
    out
}
