use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::{base_report, prepare, Orchestrator, RunConfig, RunError, RunOutcome, RunReport};
use crate::events::{run_worker, NodeCtx, WorkerOptions};
use crate::graph::{NodeId, Program};
use crate::trace::Trace;
use crate::transport::mem::MemNet;
use crate::transport::{BlockingPort, Capture, DEFAULT_MAX_FRAME};

const CHECK_INTERVAL: Duration = Duration::from_millis(50);

/// Drive a run from the head over a blocking transport whose workers are
/// already serving. Worker nodes may share `trace`. `started` marks process
/// start; `startup_us` is the time it took to bring the worker gates up.
pub fn run_head<P: BlockingPort + Clone>(
    port: P,
    program: &Program,
    cfg: &RunConfig,
    trace: Trace,
    started: Instant,
    startup_us: f64,
) -> Result<RunOutcome, RunError> {
    let t_sched = Instant::now();
    let (graph, schedule) = prepare(program, cfg)?;
    let scheduling_us = t_sched.elapsed().as_secs_f64() * 1e6;
    let mut orch = Orchestrator::new(port.clone(), graph, schedule, cfg, trace.clone());
    let mut last_check = Instant::now();
    let mut exit_started: Option<Instant> = None;
    loop {
        let gen = port.mailbox().generation();
        orch.pump();
        if exit_started.is_none() && orch.exit_at().is_some() {
            exit_started = Some(Instant::now());
        }
        if orch.is_finished() {
            break;
        }
        if last_check.elapsed() >= CHECK_INTERVAL {
            orch.check_all();
            last_check = Instant::now();
            if orch.is_finished() {
                break;
            }
        }
        if port.mailbox().is_closed() {
            return Err(RunError::Transport(crate::transport::TransportError::Closed));
        }
        port.mailbox().wait_for_change(gen, CHECK_INTERVAL);
    }
    if let Some(e) = orch.take_error() {
        return Err(e);
    }
    let report = RunReport {
        wall_us: started.elapsed().as_secs_f64() * 1e6,
        startup_us,
        scheduling_us,
        shutdown_us: exit_started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e6),
        ..base_report(&orch, cfg.workers)
    };
    Ok(RunOutcome { report, buffers: orch.head_store().clone(), trace })
}

/// Run with every worker as a set of threads in this process.
pub fn run_threads(program: &Program, cfg: &RunConfig, opts: &WorkerOptions) -> Result<RunOutcome, RunError> {
    run_threads_captured(program, cfg, opts, None)
}

/// [`run_threads`], recording every frame sent into `capture`.
pub fn run_threads_captured(
    program: &Program,
    cfg: &RunConfig,
    opts: &WorkerOptions,
    capture: Option<Capture>,
) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    let net = MemNet::with_options(cfg.workers + 1, DEFAULT_MAX_FRAME, capture);
    let trace = Trace::new();
    let handles: Vec<_> = (1..=cfg.workers as u16)
        .map(|w| {
            let port = net.port(NodeId(w));
            let ctx = Arc::new(NodeCtx::new(NodeId(w), trace.clone()));
            let opts = opts.clone();
            thread::Builder::new()
                .name(format!("tm-gate-{w}"))
                .spawn(move || run_worker(port, ctx, &opts))
                .expect("spawn gate")
        })
        .collect();
    let startup_us = started.elapsed().as_secs_f64() * 1e6;
    let result = run_head(net.port(NodeId::HEAD), program, cfg, trace, started, startup_us);
    if result.is_err() {
        for w in 1..=cfg.workers as u16 {
            net.kill(NodeId(w));
        }
    }
    for h in handles {
        let _ = h.join();
    }
    let mut out = result?;
    // Gates are joined: the run is over.
    let end = started.elapsed().as_secs_f64() * 1e6;
    out.report.shutdown_us += end - out.report.wall_us;
    out.report.wall_us = end;
    Ok(out)
}
