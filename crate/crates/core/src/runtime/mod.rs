//! Head-node orchestration: seal the program, schedule it at the barrier,
//! apply data plans, dispatch ready tasks as events and finalize.
//!
//! [`Orchestrator`] is a non-blocking state machine. [`run_sim`] drives it on
//! the discrete-event simulator; [`run_head`] drives it over any blocking
//! transport and [`run_threads`] wires up in-process worker threads.

mod orchestrator;
mod report;
mod sim;
mod threaded;

use std::time::Duration;

use thiserror::Error;

pub use orchestrator::Orchestrator;
pub use report::{RunOutcome, RunReport};
pub use sim::{run_sim, run_sim_captured, SimOptions};
pub use threaded::{run_head, run_threads, run_threads_captured};

use crate::datamgr::DataError;
use crate::events::{EventError, DEFAULT_CHANNELS};
use crate::graph::{derive_edges, validate, GraphError, Program, TaskGraph, TaskId};
use crate::kernel::store_checksum;
use crate::scheduler::{heft_schedule, Schedule};
use crate::kernel::KernelError;
use crate::scheduler::ScheduleError;
use crate::transport::TransportError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub workers: usize,
    /// Event channel count `C`; an event's channel is `tag mod C`.
    pub channels: u16,
    /// Network latency assumed by the scheduler (and used by the simulator).
    pub latency_us: f64,
    /// Bandwidth in bytes per microsecond.
    pub bandwidth: f64,
    /// Cap on concurrently dispatched compute tasks; `None` means unlimited.
    pub max_inflight: Option<usize>,
    pub event_timeout: Duration,
}

impl RunConfig {
    pub fn new(workers: usize) -> Self {
        RunConfig {
            workers,
            channels: DEFAULT_CHANNELS,
            latency_us: 2.0,
            bandwidth: 1000.0,
            max_inflight: None,
            event_timeout: Duration::from_secs(120),
        }
    }

    pub fn cost_model(&self) -> crate::scheduler::CostModel {
        crate::scheduler::CostModel::homogeneous(self.workers, self.latency_us, self.bandwidth)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("event failed{}: {source}", task.map(|t| format!(" for task {t}")).unwrap_or_default())]
    Event { task: Option<TaskId>, source: EventError },
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("run stalled: {0}")]
    Stalled(String),
}

/// Derive the graph, reject invalid programs and schedule at the barrier.
pub fn prepare(program: &Program, cfg: &RunConfig) -> Result<(TaskGraph, Schedule), RunError> {
    if cfg.workers == 0 {
        return Err(RunError::Invalid("at least one worker is required".into()));
    }
    let graph = derive_edges(program)?;
    let violations = validate(&graph);
    if let Some(v) = violations.first() {
        return Err(RunError::Invalid(format!("{v:?}")));
    }
    let schedule = heft_schedule(&graph, &cfg.cost_model())?;
    Ok((graph, schedule))
}

fn base_report<P: crate::transport::Port + Clone>(orch: &Orchestrator<P>, workers: usize) -> RunReport {
    RunReport {
        tasks: orch.graph().len(),
        edges: orch.graph().edge_count(),
        workers,
        makespan_estimate_us: orch.schedule().makespan,
        schedule_ops: orch.schedule().ops,
        busy_us: orch.busy().clone(),
        events: orch.event_counts().clone(),
        bytes_moved: orch.bytes_moved(),
        checksum: store_checksum(orch.head_store()),
        ..RunReport::default()
    }
}

#[cfg(test)]
mod tests;
