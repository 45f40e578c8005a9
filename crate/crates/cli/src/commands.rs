use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use taskmesh::check::{check_capture, check_coherence, check_dag_order, check_events};
use taskmesh::events::{EventType, DEFAULT_CHANNELS};
use taskmesh::graph::parse_graph_text;
use taskmesh::kernel::{calibrate, spin};
use taskmesh::runtime::RunReport;
use taskmesh::trace::{parse_data_csv, parse_events_csv, parse_tasks_csv, EventRecord};
use taskmesh::transport::{is_notification_key, read_capture, Frame, DEFAULT_MAX_FRAME};

use crate::config::ExperimentConfig;
use crate::exec::{build_program, io_err, run_once, CliError, Launcher};
use crate::table::{header, point_rows, Point, RUN_SCHEMA, SWEEP_SCHEMA};

/// Run `cfg.repeats` times and render the CSV. Nothing is returned unless
/// every run succeeded.
pub fn cmd_run(cfg: &ExperimentConfig, launcher: &Launcher) -> Result<String, CliError> {
    cfg.validate()?;
    let mut out = format!("{RUN_SCHEMA}\n{}\n", header());
    out.push_str(&run_point(cfg, launcher, "", cfg.trace_dir.as_deref())?);
    Ok(out)
}

fn run_point(cfg: &ExperimentConfig, launcher: &Launcher, prefix: &str, trace_dir: Option<&Path>) -> Result<String, CliError> {
    let (program, sizing) = build_program(cfg)?;
    let mut reports = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let dir = trace_dir.map(|d| d.join(format!("run-{r}")));
        let out = run_once(cfg, &program, launcher, dir.as_deref())
            .map_err(|e| CliError::Failed(format!("run {r} of {}: {e}", cfg.repeats)))?;
        log::info!("run {r}: wall {:.3} us, overhead {:.4}", out.report.wall_us, out.report.overhead_fraction());
        reports.push(out.report);
    }
    Ok(point_rows(prefix, &Point::new(cfg, sizing.bytes, program.tasks().len()), &reports))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Nodes,
    Ccr,
    Iterations,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Nodes => "nodes",
            Axis::Ccr => "ccr",
            Axis::Iterations => "iterations",
        }
    }

    /// Values swept when none are given.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            Axis::Nodes => &["2", "4", "8", "16", "32", "64"],
            Axis::Ccr => &["0.5", "1", "2"],
            Axis::Iterations => &["1000", "10000", "100000", "1000000", "10000000", "100000000"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

impl FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nodes" => Ok(Axis::Nodes),
            "ccr" => Ok(Axis::Ccr),
            "iterations" => Ok(Axis::Iterations),
            _ => Err(format!("unknown axis `{s}` (expected nodes, ccr or iterations)")),
        }
    }
}

/// Config for each sweep value. Sweeping nodes switches on the weak-scaling
/// grid. All points are validated before anything runs.
pub fn sweep_points(cfg: &ExperimentConfig, axis: Axis, values: &[String]) -> Result<Vec<ExperimentConfig>, CliError> {
    if values.is_empty() {
        return Err(CliError::Failed("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(axis.as_str(), v).map_err(|e| CliError::Failed(format!("{} value: {e}", axis.as_str())))?;
            if axis == Axis::Nodes {
                c.weak_scaling = true;
            }
            c.validate()?;
            Ok(c)
        })
        .collect()
}

pub fn cmd_sweep(cfg: &ExperimentConfig, axis: Axis, values: &[String], launcher: &Launcher) -> Result<String, CliError> {
    cfg.validate()?;
    let points = sweep_points(cfg, axis, values)?;
    let mut out = format!("{SWEEP_SCHEMA}\naxis,value,{}\n", header());
    for (c, v) in points.iter().zip(values) {
        let dir = cfg.trace_dir.as_ref().map(|d| d.join(format!("{}-{v}", axis.as_str())));
        out.push_str(&run_point(c, launcher, &format!("{},{v},", axis.as_str()), dir.as_deref())?);
    }
    Ok(out)
}

/// Outcome of each offline check over a trace directory.
#[derive(Debug, Default)]
pub struct Verdict {
    pub checks: Vec<(&'static str, Vec<String>)>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, v)| v.is_empty())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, v) in &self.checks {
            let _ = writeln!(out, "{name}: {}", if v.is_empty() { "PASS".to_string() } else { format!("FAIL ({})", v.len()) });
            for msg in v.iter().take(20) {
                let _ = writeln!(out, "  {msg}");
            }
            if v.len() > 20 {
                let _ = writeln!(out, "  ... {} more", v.len() - 20);
            }
        }
        out
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))
}

fn matching(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(format!("listing {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with(prefix) && name.ends_with(ext)
        })
        .collect();
    out.sort();
    Ok(out)
}

fn parsed<T>(path: &Path, r: Result<T, String>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

/// Run the offline validators over a directory written by a traced run.
pub fn cmd_check(dir: &Path) -> Result<Verdict, CliError> {
    let gpath = dir.join("graph.txt");
    let graph = parsed(&gpath, parse_graph_text(&read(&gpath)?))?;
    let tpath = dir.join("tasks.csv");
    let tasks = parsed(&tpath, parse_tasks_csv(&read(&tpath)?))?;
    let dpath = dir.join("data.csv");
    let data = parsed(&dpath, parse_data_csv(&read(&dpath)?))?;
    let mut events: Vec<EventRecord> = Vec::new();
    for p in matching(dir, "events", ".csv")? {
        events.extend(parsed(&p, parse_events_csv(&read(&p)?))?);
    }
    let mut frames = Vec::new();
    for p in matching(dir, "frames", ".tmf")? {
        let bytes = fs::read(&p).map_err(io_err(format!("reading {}", p.display())))?;
        frames.extend(read_capture(&bytes, DEFAULT_MAX_FRAME).map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?);
    }
    let cpath = dir.join("channels.txt");
    let channels = if cpath.exists() {
        let t = read(&cpath)?;
        t.trim().parse::<u16>().map_err(|e| CliError::Failed(format!("{}: {e}", cpath.display())))?
    } else {
        DEFAULT_CHANNELS
    };
    let mut checks = vec![
        ("dag_order", check_dag_order(graph.nodes.len(), &graph.edges, &tasks)),
        ("coherence", check_coherence(&data)),
        ("conservation", check_events(&events)),
    ];
    if !frames.is_empty() {
        checks.push(("tag_isolation", check_capture(&frames, &events, channels)));
    }
    let rpath = dir.join("report.txt");
    if rpath.exists() {
        let report = parsed(&rpath, RunReport::parse(&read(&rpath)?))?;
        let mut v = Vec::new();
        if report.tasks != graph.nodes.len() {
            v.push(format!("report has {} tasks, graph has {}", report.tasks, graph.nodes.len()));
        }
        if report.total_events() as usize != events.iter().map(|e| e.tag).collect::<std::collections::BTreeSet<_>>().len() {
            v.push(format!("report counts {} events, trace has a different number of tags", report.total_events()));
        }
        checks.push(("report", v));
    }
    Ok(Verdict { checks })
}

fn describe(f: &Frame) -> String {
    let kind = if f.tag == u64::MAX {
        "control".to_string()
    } else if is_notification_key(f.tag, f.channel) {
        "notification".to_string()
    } else {
        EventType::from_u8(f.etype).map_or_else(|| format!("etype {}", f.etype), |e| e.as_str().to_string())
    };
    let tag = if f.tag == u64::MAX { "-".to_string() } else { f.tag.to_string() };
    let head: String = f.payload.iter().take(16).map(|b| format!("{b:02x}")).collect();
    let more = if f.payload.len() > 16 { ".." } else { "" };
    format!("origin={} tag={tag} channel={} {kind} len={} {head}{more}", f.origin, f.channel, f.payload.len())
}

/// Pretty-print a frame capture, one frame per line.
pub fn cmd_tmf_dump(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
    let frames = read_capture(&bytes, DEFAULT_MAX_FRAME).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    let mut out = String::new();
    for (i, f) in frames.iter().enumerate() {
        let _ = writeln!(out, "{i:6} {}", describe(f));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub target: Duration,
    pub iterations: u64,
    pub ns_per_iteration: f64,
    /// Re-measured durations of `iterations`.
    pub checks: Vec<Duration>,
}

impl Calibration {
    /// Largest relative deviation of a re-run from the target.
    pub fn worst_error(&self) -> f64 {
        let t = self.target.as_secs_f64();
        self.checks.iter().map(|d| (d.as_secs_f64() - t).abs() / t).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "target_ms = {:.3}\niterations = {}\nns_per_iteration = {:.4}\n",
            self.target.as_secs_f64() * 1e3,
            self.iterations,
            self.ns_per_iteration
        );
        for (i, d) in self.checks.iter().enumerate() {
            let _ = writeln!(out, "rerun.{i}_ms = {:.3}", d.as_secs_f64() * 1e3);
        }
        let _ = writeln!(out, "worst_error = {:.4}", self.worst_error());
        out
    }
}

/// Find the iteration count that spins for `target`, then time it `reruns`
/// more times.
pub fn cmd_calibrate(target: Duration, reruns: usize) -> Calibration {
    let iterations = calibrate(target);
    let checks = (0..reruns)
        .map(|_| {
            let t0 = Instant::now();
            std::hint::black_box(spin(iterations));
            t0.elapsed()
        })
        .collect();
    Calibration { target, iterations, ns_per_iteration: target.as_secs_f64() * 1e9 / iterations as f64, checks }
}
