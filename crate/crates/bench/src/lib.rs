//! Synthetic Task Bench-style workloads: a `width × steps` grid of target
//! tasks wired by a dependency pattern, with buffer sizes derived from a
//! computation-to-communication ratio.
//!
//! Every grid cell `(t, i)` owns one buffer. The task for the cell updates its
//! own buffer (`InOut`) and reads the previous-step buffers its pattern names
//! (`In`). Every buffer is entered from the head before the grid and exited
//! after it.

use std::fmt;
use std::str::FromStr;

use taskmesh::graph::{BufferId, Dep, DepDirection, KernelDescriptor, Program, TaskId, TaskKind};
use taskmesh::kernel::DEFAULT_NS_PER_ITERATION;
use taskmesh::scheduler::CostModel;
use thiserror::Error;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Pattern {
    Trivial,
    Stencil1D,
    Fft,
    Tree,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::Trivial, Pattern::Stencil1D, Pattern::Fft, Pattern::Tree];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Trivial => "trivial",
            Pattern::Stencil1D => "stencil_1d",
            Pattern::Fft => "fft",
            Pattern::Tree => "tree",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| BenchError::InvalidSpec(format!("unknown pattern '{s}'")))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSpec {
    pub pattern: Pattern,
    /// Tasks per timestep.
    pub width: usize,
    pub steps: usize,
    pub iterations_per_task: u64,
    pub ccr: f64,
    /// Worker count this benchmark is sized for.
    pub nodes: usize,
    /// Calibrated cost of one kernel iteration.
    pub ns_per_iteration: f64,
}

/// Steps of the weak-scaling grid; its width is `2n`.
pub const WEAK_SCALING_STEPS: usize = 32;

/// Iterations of a 50 ms task at the default calibration.
pub const DEFAULT_ITERATIONS: u64 = 10_000_000;

impl BenchSpec {
    pub fn new(pattern: Pattern, width: usize, steps: usize) -> Self {
        BenchSpec {
            pattern,
            width,
            steps,
            iterations_per_task: DEFAULT_ITERATIONS,
            ccr: 1.0,
            nodes: 1,
            ns_per_iteration: DEFAULT_NS_PER_ITERATION,
        }
    }

    /// `2n × 32` grid for `n` nodes.
    pub fn weak_scaling(pattern: Pattern, nodes: usize) -> Self {
        BenchSpec { nodes, ..Self::new(pattern, 2 * nodes, WEAK_SCALING_STEPS) }
    }

    /// Long tasks with almost no communication.
    pub fn coarse(pattern: Pattern, width: usize, steps: usize) -> Self {
        BenchSpec { iterations_per_task: 10 * DEFAULT_ITERATIONS, ccr: 100.0, ..Self::new(pattern, width, steps) }
    }

    /// Compute time of one task.
    pub fn task_us(&self) -> f64 {
        self.iterations_per_task as f64 * self.ns_per_iteration / 1000.0
    }

    pub fn task_count(&self) -> usize {
        self.width * self.steps
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidSpec(m));
        if self.width == 0 || self.steps == 0 {
            return bad(format!("grid {}x{} is empty", self.width, self.steps));
        }
        if !(self.ccr > 0.0 && self.ccr.is_finite()) {
            return bad(format!("ccr must be positive, got {}", self.ccr));
        }
        if !(self.ns_per_iteration > 0.0) {
            return bad("ns_per_iteration must be positive".into());
        }
        if matches!(self.pattern, Pattern::Fft | Pattern::Tree) && !self.width.is_power_of_two() {
            return bad(format!("{} needs a power-of-two width, got {}", self.pattern, self.width));
        }
        Ok(())
    }
}

/// Columns of step `t - 1` that cell `(t, i)` reads. Empty for `t = 0`.
/// Sorted, without duplicates.
pub fn dependencies(pattern: Pattern, width: usize, t: usize, i: usize) -> Vec<usize> {
    if t == 0 {
        return Vec::new();
    }
    let mut deps = match pattern {
        Pattern::Trivial => Vec::new(),
        Pattern::Stencil1D => (i.saturating_sub(1)..=(i + 1).min(width - 1)).collect(),
        Pattern::Fft => {
            let levels = width.trailing_zeros() as usize;
            if levels == 0 {
                vec![i]
            } else {
                vec![i, i ^ (1 << ((t - 1) % levels))]
            }
        }
        Pattern::Tree => tree_deps(width, t, i),
    };
    deps.sort_unstable();
    deps.dedup();
    deps
}

/// Reduce up the tree, then broadcast back down; `2·log2(width)` transitions
/// per cycle.
fn tree_deps(width: usize, t: usize, i: usize) -> Vec<usize> {
    let k = width.trailing_zeros() as usize;
    if k == 0 {
        return Vec::new();
    }
    let phase = (t - 1) % (2 * k);
    if phase < k {
        let stride = 1 << (phase + 1);
        if i % stride == 0 {
            vec![i, i + stride / 2]
        } else {
            Vec::new()
        }
    } else {
        let stride = 1 << (2 * k - phase);
        match i % stride {
            0 => vec![i],
            r if r == stride / 2 => vec![i - stride / 2],
            _ => Vec::new(),
        }
    }
}

/// Largest number of incoming pattern dependencies of any cell.
pub fn max_in_degree(pattern: Pattern, width: usize) -> usize {
    (1..=2 * width.max(1)).flat_map(|t| (0..width).map(move |i| dependencies(pattern, width, t, i).len())).max().unwrap_or(0)
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Sizing {
    pub bytes: u64,
    /// Latency alone used up the communication budget.
    pub clamped: bool,
}

/// Bytes per dependency such that `d` incoming transfers take `task_us / ccr`
/// under `cost`: `(task_us/ccr - d·latency)·bandwidth / d`, at least 1.
pub fn bytes_for(task_us: f64, ccr: f64, d: usize, cost: &CostModel) -> Sizing {
    if d == 0 {
        return Sizing { bytes: 1, clamped: false };
    }
    let budget = task_us / ccr - d as f64 * cost.latency_us;
    if budget <= 0.0 {
        log::warn!("latency exceeds the communication budget of {:.3} us; clamping to 1 byte", task_us / ccr);
        return Sizing { bytes: 1, clamped: true };
    }
    Sizing { bytes: ((budget * cost.bandwidth / d as f64).floor() as u64).max(1), clamped: false }
}

pub fn size_buffers(spec: &BenchSpec, cost: &CostModel) -> Sizing {
    bytes_for(spec.task_us(), spec.ccr, max_in_degree(spec.pattern, spec.width), cost)
}

pub fn cell_buffer(spec: &BenchSpec, t: usize, i: usize) -> BufferId {
    BufferId((t * spec.width + i) as u64)
}

/// Task id of grid cell `(t, i)`: enter tasks come first.
pub fn cell_task(spec: &BenchSpec, t: usize, i: usize) -> TaskId {
    TaskId(spec.task_count() + t * spec.width + i)
}

/// Build the program: enter every cell buffer, the grid in step-major
/// order, then exit every cell buffer.
pub fn generate(spec: &BenchSpec, buffer_bytes: u64) -> Result<Program, BenchError> {
    spec.validate()?;
    let mut p = Program::new();
    let cells = spec.task_count();
    for _ in 0..cells {
        p.add_buffer(buffer_bytes.max(1));
    }
    let add = |p: &mut Program, kind, deps, cost| {
        let k = KernelDescriptor::with_iterations(if kind == TaskKind::TargetTask { spec.iterations_per_task } else { 0 });
        p.add_task(kind, deps, cost, k).map_err(|e| BenchError::InvalidSpec(e.to_string()))
    };
    for c in 0..cells {
        add(&mut p, TaskKind::TargetDataEnter, vec![Dep::new(BufferId(c as u64), DepDirection::Out)], 0.0)?;
    }
    for t in 0..spec.steps {
        for i in 0..spec.width {
            let mut deps = vec![Dep::new(cell_buffer(spec, t, i), DepDirection::InOut)];
            deps.extend(
                dependencies(spec.pattern, spec.width, t, i)
                    .into_iter()
                    .map(|j| Dep::new(cell_buffer(spec, t - 1, j), DepDirection::In)),
            );
            add(&mut p, TaskKind::TargetTask, deps, spec.task_us().max(f64::MIN_POSITIVE))?;
        }
    }
    for c in 0..cells {
        let exit = TaskKind::TargetDataExit { release: false };
        add(&mut p, exit, vec![Dep::new(BufferId(c as u64), DepDirection::In)], 0.0)?;
    }
    p.seal();
    Ok(p)
}

/// [`generate`] with buffers sized by [`size_buffers`].
pub fn generate_sized(spec: &BenchSpec, cost: &CostModel) -> Result<(Program, Sizing), BenchError> {
    let sizing = size_buffers(spec, cost);
    Ok((generate(spec, sizing.bytes)?, sizing))
}

#[cfg(test)]
mod tests;
