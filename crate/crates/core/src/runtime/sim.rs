use std::sync::Arc;

use super::{base_report, prepare, Orchestrator, RunConfig, RunError, RunOutcome};
use crate::events::{NodeCtx, SimWorker};
use crate::graph::{NodeId, Program};
use crate::trace::Trace;
use crate::transport::sim::{Advance, NetModel, SimNet};
use crate::transport::Capture;

/// Knobs that exist only in virtual time.
#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    pub seed: u64,
    pub jitter_us: f64,
    /// Head CPU time spent originating one event.
    pub head_event_us: f64,
    /// Modeled cost of one counted scheduler operation.
    pub sched_op_us: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { seed: 0, jitter_us: 0.0, head_event_us: 5.0, sched_op_us: 0.05 }
    }
}

/// Run `program` on the discrete-event simulator. Deterministic for a given
/// seed: same trace, same report.
pub fn run_sim(program: &Program, cfg: &RunConfig, opts: &SimOptions) -> Result<RunOutcome, RunError> {
    run_sim_captured(program, cfg, opts, None)
}

/// [`run_sim`], recording every frame sent into `capture`.
pub fn run_sim_captured(
    program: &Program,
    cfg: &RunConfig,
    opts: &SimOptions,
    capture: Option<Capture>,
) -> Result<RunOutcome, RunError> {
    let (graph, schedule) = prepare(program, cfg)?;
    let model = NetModel { jitter_us: opts.jitter_us, ..NetModel::new(cfg.latency_us, cfg.bandwidth, opts.seed) };
    let net = SimNet::with_capture(cfg.workers + 1, model, capture);
    let trace = Trace::new();
    let mut workers: Vec<SimWorker> =
        (1..=cfg.workers).map(|w| SimWorker::new(Arc::new(NodeCtx::new(NodeId(w as u16), trace.clone())))).collect();
    let ports: Vec<_> = (0..=cfg.workers).map(|n| net.port(NodeId(n as u16))).collect();

    let scheduling_us = schedule.ops as f64 * opts.sched_op_us;
    net.advance_to(scheduling_us);
    let mut orch = Orchestrator::new(ports[0].clone(), graph, schedule, cfg, trace.clone()).with_event_cpu(opts.head_event_us);
    orch.pump();
    while !orch.is_finished() {
        match net.advance() {
            Advance::Delivered { dst, .. } | Advance::Woke { node: dst, .. } => {
                if dst.is_head() {
                    orch.pump();
                } else {
                    workers[dst.index() - 1].pump(&ports[dst.index()]);
                }
            }
            Advance::Idle => {
                match orch.earliest_deadline() {
                    Some(d) if d >= net.now() => net.advance_to(d + 1.0),
                    _ => {}
                }
                orch.check_all();
                if !orch.is_finished() {
                    return Err(RunError::Stalled(format!("{} events in flight with no traffic", orch.in_flight())));
                }
            }
        }
    }
    if let Some(e) = orch.take_error() {
        return Err(e);
    }
    let wall_us = net.now();
    let report = super::RunReport {
        wall_us,
        startup_us: 0.0,
        scheduling_us,
        shutdown_us: orch.exit_at().map_or(0.0, |t| wall_us - t),
        ..base_report(&orch, cfg.workers)
    };
    Ok(RunOutcome { report, buffers: orch.head_store().clone(), trace })
}
