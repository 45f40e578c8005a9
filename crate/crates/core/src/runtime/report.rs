use std::collections::BTreeMap;
use std::fmt::Write;

use crate::events::EventType;
use crate::graph::{BufferId, NodeId};
use crate::trace::Trace;

/// Metrics of one run. Times are microseconds on the driving clock (virtual
/// for the simulator, wall-clock otherwise).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub tasks: usize,
    pub edges: usize,
    pub workers: usize,
    pub wall_us: f64,
    /// Process start until the worker gates are up.
    pub startup_us: f64,
    /// Whole-graph HEFT at the barrier.
    pub scheduling_us: f64,
    /// From the exit events until the workers are gone.
    pub shutdown_us: f64,
    pub makespan_estimate_us: f64,
    pub schedule_ops: u64,
    /// Kernel time per node, head included.
    pub busy_us: BTreeMap<NodeId, f64>,
    pub events: BTreeMap<EventType, u64>,
    pub bytes_moved: u64,
    pub checksum: u64,
}

impl RunReport {
    pub fn total_busy_us(&self) -> f64 {
        self.busy_us.values().sum()
    }

    pub fn total_events(&self) -> u64 {
        self.events.values().sum()
    }

    fn frac(&self, x: f64) -> f64 {
        if self.wall_us > 0.0 {
            x / self.wall_us
        } else {
            0.0
        }
    }

    pub fn startup_fraction(&self) -> f64 {
        self.frac(self.startup_us)
    }

    pub fn scheduling_fraction(&self) -> f64 {
        self.frac(self.scheduling_us)
    }

    pub fn shutdown_fraction(&self) -> f64 {
        self.frac(self.shutdown_us)
    }

    /// Share of the available worker time not spent in kernels:
    /// `1 - busy / (workers * wall)`, clamped to `[0, 1]`.
    pub fn overhead_fraction(&self) -> f64 {
        if self.wall_us <= 0.0 || self.workers == 0 {
            return 0.0;
        }
        (1.0 - self.total_busy_us() / (self.workers as f64 * self.wall_us)).clamp(0.0, 1.0)
    }

    /// Flat `key=value` lines; floats with three decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("tasks", self.tasks.to_string());
        kv("edges", self.edges.to_string());
        kv("workers", self.workers.to_string());
        kv("wall_us", format!("{:.3}", self.wall_us));
        kv("startup_us", format!("{:.3}", self.startup_us));
        kv("scheduling_us", format!("{:.3}", self.scheduling_us));
        kv("shutdown_us", format!("{:.3}", self.shutdown_us));
        kv("makespan_estimate_us", format!("{:.3}", self.makespan_estimate_us));
        kv("schedule_ops", self.schedule_ops.to_string());
        kv("startup_fraction", format!("{:.6}", self.startup_fraction()));
        kv("scheduling_fraction", format!("{:.6}", self.scheduling_fraction()));
        kv("shutdown_fraction", format!("{:.6}", self.shutdown_fraction()));
        kv("overhead_fraction", format!("{:.6}", self.overhead_fraction()));
        for (n, b) in &self.busy_us {
            kv(&format!("busy_us.{}", n.0), format!("{b:.3}"));
        }
        for (t, c) in &self.events {
            kv(&format!("events.{t}"), c.to_string());
        }
        kv("bytes_moved", self.bytes_moved.to_string());
        kv("checksum", format!("{:016x}", self.checksum));
        s
    }

    /// Parse the output of [`to_text`](Self::to_text). Derived fractions are
    /// recomputed and ignored on input.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut r = RunReport::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: &str| format!("line {}: {m}", i + 1);
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key=value"))?;
            let f = || v.parse::<f64>().map_err(|_| err("bad number"));
            let u = || v.parse::<u64>().map_err(|_| err("bad integer"));
            match k {
                "tasks" => r.tasks = u()? as usize,
                "edges" => r.edges = u()? as usize,
                "workers" => r.workers = u()? as usize,
                "wall_us" => r.wall_us = f()?,
                "startup_us" => r.startup_us = f()?,
                "scheduling_us" => r.scheduling_us = f()?,
                "shutdown_us" => r.shutdown_us = f()?,
                "makespan_estimate_us" => r.makespan_estimate_us = f()?,
                "schedule_ops" => r.schedule_ops = u()?,
                "bytes_moved" => r.bytes_moved = u()?,
                "checksum" => r.checksum = u64::from_str_radix(v, 16).map_err(|_| err("bad checksum"))?,
                k if k.ends_with("_fraction") => {}
                k => {
                    if let Some(n) = k.strip_prefix("busy_us.") {
                        let n: u16 = n.parse().map_err(|_| err("bad node"))?;
                        r.busy_us.insert(NodeId(n), f()?);
                    } else if let Some(t) = k.strip_prefix("events.") {
                        let t: EventType = t.parse().map_err(|_| err("unknown event type"))?;
                        r.events.insert(t, u()?);
                    } else {
                        return Err(err(&format!("unknown key {k}")));
                    }
                }
            }
        }
        Ok(r)
    }
}

/// Report plus the final buffers retrieved to the head and the run trace.
#[derive(Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub buffers: BTreeMap<BufferId, Vec<u8>>,
    pub trace: Trace,
}
