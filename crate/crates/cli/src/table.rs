//! CSV rows for `run` and `sweep`. Schemas are listed in `docs/formats.md`;
//! the first line of every file names the schema and its version.

use std::fmt::Write as _;

use taskmesh::runtime::RunReport;

use crate::config::ExperimentConfig;
use crate::stats::{mean, stddev};

pub const RUN_SCHEMA: &str = "# taskmesh-run v1";
pub const SWEEP_SCHEMA: &str = "# taskmesh-sweep v1";

pub const POINT_COLUMNS: [&str; 10] =
    ["transport", "pattern", "width", "steps", "nodes", "iterations", "ccr", "task_us", "buffer_bytes", "tasks"];

pub const METRICS: [&str; 8] = [
    "wall_us",
    "startup_us",
    "scheduling_us",
    "shutdown_us",
    "busy_us",
    "overhead_fraction",
    "bytes_moved",
    "events",
];

/// Per-run metric values, in [`METRICS`] order.
pub fn metrics(r: &RunReport) -> [f64; 8] {
    [
        r.wall_us,
        r.startup_us,
        r.scheduling_us,
        r.shutdown_us,
        r.total_busy_us(),
        r.overhead_fraction(),
        r.bytes_moved as f64,
        r.total_events() as f64,
    ]
}

/// Column names after any sweep prefix.
pub fn header() -> String {
    let mut cols = vec!["kind".to_string(), "repeat".to_string()];
    cols.extend(POINT_COLUMNS.iter().map(|s| s.to_string()));
    cols.extend(METRICS.iter().map(|s| s.to_string()));
    cols.push("checksum".into());
    cols.extend(METRICS.iter().map(|m| format!("{m}_stddev")));
    cols.join(",")
}

/// What was run at one experiment point.
#[derive(Clone, Debug)]
pub struct Point {
    pub cells: Vec<String>,
}

impl Point {
    pub fn new(cfg: &ExperimentConfig, buffer_bytes: u64, tasks: usize) -> Self {
        let spec = cfg.bench_spec();
        Point {
            cells: vec![
                cfg.transport.to_string(),
                spec.pattern.to_string(),
                spec.width.to_string(),
                spec.steps.to_string(),
                cfg.nodes.to_string(),
                spec.iterations_per_task.to_string(),
                cfg.ccr.to_string(),
                format!("{:.3}", spec.task_us()),
                buffer_bytes.to_string(),
                tasks.to_string(),
            ],
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per run, then a summary row with means and sample deviations.
pub fn point_rows(prefix: &str, point: &Point, reports: &[RunReport]) -> String {
    let mut out = String::new();
    let blank = vec![String::new(); METRICS.len()];
    for (i, r) in reports.iter().enumerate() {
        let vals: Vec<String> = metrics(r).iter().map(|&v| num(v)).collect();
        let cells = [
            vec!["run".to_string(), i.to_string()],
            point.cells.clone(),
            vals,
            vec![format!("{:016x}", r.checksum)],
            blank.clone(),
        ]
        .concat();
        let _ = writeln!(out, "{prefix}{}", cells.join(","));
    }
    let cols: Vec<Vec<f64>> = (0..METRICS.len()).map(|m| reports.iter().map(|r| metrics(r)[m]).collect()).collect();
    let cells = [
        vec!["summary".to_string(), String::new()],
        point.cells.clone(),
        cols.iter().map(|c| num(mean(c))).collect(),
        vec![String::new()],
        cols.iter().map(|c| num(stddev(c))).collect(),
    ]
    .concat();
    let _ = writeln!(out, "{prefix}{}", cells.join(","));
    out
}
