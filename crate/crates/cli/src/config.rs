//! Experiment configuration: one `key = value` per line, `#` starts a
//! comment. Grammar and key list are in `docs/formats.md`.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use taskmesh::events::DEFAULT_CHANNELS;
use taskmesh::kernel::DEFAULT_NS_PER_ITERATION;
use taskmesh::runtime::{RunConfig, SimOptions};
use taskmesh_bench::{BenchSpec, Pattern, DEFAULT_ITERATIONS, WEAK_SCALING_STEPS};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    /// Discrete-event simulator in virtual time.
    Sim,
    /// Workers as threads of this process over an in-memory transport.
    Threads,
    /// Workers as child processes over localhost TCP.
    Tcp,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Sim => "sim",
            Transport::Threads => "threads",
            Transport::Tcp => "tcp",
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transport {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(Transport::Sim),
            "threads" => Ok(Transport::Threads),
            "tcp" => Ok(Transport::Tcp),
            _ => Err(format!("unknown transport `{s}` (expected sim, threads or tcp)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub transport: Transport,
    /// Worker count.
    pub nodes: usize,
    pub pattern: Pattern,
    pub width: usize,
    pub steps: usize,
    pub iterations: u64,
    pub ccr: f64,
    pub repeats: usize,
    pub seed: u64,
    pub channels: u16,
    /// Handler threads per worker; `None` picks from the CPU count.
    pub handlers: Option<usize>,
    /// CSV destination; `None` writes to stdout.
    pub output: Option<PathBuf>,
    pub latency_us: f64,
    pub bandwidth: f64,
    pub ns_per_iteration: f64,
    pub jitter_us: f64,
    pub head_event_us: f64,
    pub max_inflight: Option<usize>,
    /// Override width and steps with the `2n × 32` grid.
    pub weak_scaling: bool,
    pub trace_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SimOptions::default();
        let run = RunConfig::new(1);
        ExperimentConfig {
            transport: Transport::Sim,
            nodes: 2,
            pattern: Pattern::Trivial,
            width: 1,
            steps: 16,
            iterations: DEFAULT_ITERATIONS,
            ccr: 1.0,
            repeats: 1,
            seed: 0,
            channels: DEFAULT_CHANNELS,
            handlers: None,
            output: None,
            latency_us: run.latency_us,
            bandwidth: run.bandwidth,
            ns_per_iteration: DEFAULT_NS_PER_ITERATION,
            jitter_us: sim.jitter_us,
            head_event_us: sim.head_event_us,
            max_inflight: None,
            weak_scaling: false,
            trace_dir: None,
        }
    }
}

pub const KEYS: [&str; 20] = [
    "transport",
    "nodes",
    "pattern",
    "width",
    "steps",
    "iterations",
    "ccr",
    "repeats",
    "seed",
    "channels",
    "handlers",
    "output",
    "latency_us",
    "bandwidth",
    "ns_per_iteration",
    "jitter_us",
    "head_event_us",
    "max_inflight",
    "weak_scaling",
    "trace_dir",
];

fn value<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("bad value `{v}`: {e}"))
}

fn optional<T: FromStr>(v: &str) -> Result<Option<T>, String>
where
    T::Err: fmt::Display,
{
    if v == "auto" || v == "none" {
        Ok(None)
    } else {
        value(v).map(Some)
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (v != "none").then(|| PathBuf::from(v))
}

impl ExperimentConfig {
    /// Parse config text on top of the defaults and validate the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Parse { line, msg };
            let (key, val) = body.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{body}`")))?;
            let (key, val) = (key.trim(), val.trim());
            if val.is_empty() {
                return Err(err(format!("`{key}` has no value")));
            }
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key `{key}`")));
            }
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, val).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one key from its text form. Does not validate.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "transport" => self.transport = value(v)?,
            "nodes" => self.nodes = value(v)?,
            "pattern" => self.pattern = value(v)?,
            "width" => self.width = value(v)?,
            "steps" => self.steps = value(v)?,
            "iterations" => self.iterations = value(v)?,
            "ccr" => self.ccr = value(v)?,
            "repeats" => self.repeats = value(v)?,
            "seed" => self.seed = value(v)?,
            "channels" => self.channels = value(v)?,
            "handlers" => self.handlers = optional(v)?,
            "output" => self.output = path(v),
            "latency_us" => self.latency_us = value(v)?,
            "bandwidth" => self.bandwidth = value(v)?,
            "ns_per_iteration" => self.ns_per_iteration = value(v)?,
            "jitter_us" => self.jitter_us = value(v)?,
            "head_event_us" => self.head_event_us = value(v)?,
            "max_inflight" => self.max_inflight = optional(v)?,
            "weak_scaling" => self.weak_scaling = value(v)?,
            "trace_dir" => self.trace_dir = path(v),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key, in canonical order. `parse(to_text())` gives back `self`.
    pub fn to_text(&self) -> String {
        fn opt<T: fmt::Display>(v: &Option<T>, none: &str) -> String {
            v.as_ref().map_or(none.to_string(), |x| x.to_string())
        }
        let p = |v: &Option<PathBuf>| v.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("transport", self.transport.to_string());
        kv("nodes", self.nodes.to_string());
        kv("pattern", self.pattern.to_string());
        kv("width", self.width.to_string());
        kv("steps", self.steps.to_string());
        kv("iterations", self.iterations.to_string());
        kv("ccr", self.ccr.to_string());
        kv("repeats", self.repeats.to_string());
        kv("seed", self.seed.to_string());
        kv("channels", self.channels.to_string());
        kv("handlers", opt(&self.handlers, "auto"));
        kv("output", p(&self.output));
        kv("latency_us", self.latency_us.to_string());
        kv("bandwidth", self.bandwidth.to_string());
        kv("ns_per_iteration", self.ns_per_iteration.to_string());
        kv("jitter_us", self.jitter_us.to_string());
        kv("head_event_us", self.head_event_us.to_string());
        kv("max_inflight", opt(&self.max_inflight, "none"));
        kv("weak_scaling", self.weak_scaling.to_string());
        kv("trace_dir", p(&self.trace_dir));
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if self.nodes == 0 || self.nodes >= u16::MAX as usize {
            return bad(format!("nodes must be in 1..{}, got {}", u16::MAX, self.nodes));
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.channels == 0 {
            return bad("channels must be at least 1".into());
        }
        if self.handlers == Some(0) {
            return bad("handlers must be at least 1".into());
        }
        if self.max_inflight == Some(0) {
            return bad("max_inflight must be at least 1".into());
        }
        if !nonneg(self.latency_us) || !nonneg(self.jitter_us) || !nonneg(self.head_event_us) {
            return bad("latency_us, jitter_us and head_event_us must be finite and non-negative".into());
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        for (k, p) in [("output", &self.output), ("trace_dir", &self.trace_dir)] {
            if let Some(p) = p {
                let s = p.display().to_string();
                if s.is_empty() || s.contains('#') || s.trim() != s || s == "none" {
                    return bad(format!("{k} path `{s}` cannot be written back to a config file"));
                }
            }
        }
        self.bench_spec().validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Effective benchmark grid.
    pub fn bench_spec(&self) -> BenchSpec {
        let (width, steps) = if self.weak_scaling { (2 * self.nodes, WEAK_SCALING_STEPS) } else { (self.width, self.steps) };
        BenchSpec {
            iterations_per_task: self.iterations,
            ccr: self.ccr,
            nodes: self.nodes,
            ns_per_iteration: self.ns_per_iteration,
            ..BenchSpec::new(self.pattern, width, steps)
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            channels: self.channels,
            latency_us: self.latency_us,
            bandwidth: self.bandwidth,
            max_inflight: self.max_inflight,
            ..RunConfig::new(self.nodes)
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions { seed: self.seed, jitter_us: self.jitter_us, head_event_us: self.head_event_us, ..SimOptions::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(ExperimentConfig::parse("").unwrap(), c);
    }

    #[test]
    fn comments_and_whitespace() {
        let c = ExperimentConfig::parse("# header\n\n  nodes =  4  # four workers\npattern=stencil_1d\n").unwrap();
        assert_eq!(c.nodes, 4);
        assert_eq!(c.pattern, Pattern::Stencil1D);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = |t: &str| ExperimentConfig::parse(t).unwrap_err();
        assert!(matches!(e("nodes = 2\npattern = mesh\n"), ConfigError::Parse { line: 2, .. }));
        assert!(e("nodes = 2\npattern = mesh\n").to_string().starts_with("line 2: "));
        assert!(matches!(e("\n\nbogus = 1"), ConfigError::Parse { line: 3, .. }));
        assert!(matches!(e("nodes = 2\nnodes = 3"), ConfigError::Parse { line: 2, .. }));
        assert!(matches!(e("nodes"), ConfigError::Parse { line: 1, .. }));
        assert!(matches!(e("nodes ="), ConfigError::Parse { line: 1, .. }));
        assert!(matches!(e("nodes = -1"), ConfigError::Parse { line: 1, .. }));
    }

    #[test]
    fn validation_runs_after_parse() {
        for t in ["repeats = 0", "nodes = 0", "pattern = fft\nwidth = 6", "ccr = 0", "bandwidth = 0", "handlers = 0", "latency_us = nan"] {
            assert!(matches!(ExperimentConfig::parse(t), Err(ConfigError::Invalid(_))), "{t}");
        }
    }

    #[test]
    fn weak_scaling_overrides_grid() {
        let c = ExperimentConfig::parse("nodes = 5\nweak_scaling = true\nwidth = 3").unwrap();
        let s = c.bench_spec();
        assert_eq!((s.width, s.steps), (10, 32));
    }
}
