//! One experiment run on the configured transport, plus the worker-process
//! entry point used by TCP mode.

use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use taskmesh::events::{run_worker, NodeCtx, WorkerOptions};
use taskmesh::graph::{derive_edges, NodeId, Program};
use taskmesh::runtime::{
    prepare, run_head, run_sim_captured, run_threads_captured, RunConfig, RunError, RunOutcome,
};
use taskmesh::trace::Trace;
use taskmesh::transport::tcp::TcpPort;
use taskmesh::transport::{Capture, TransportError};
use taskmesh_bench::{generate_sized, BenchError, Sizing};

use crate::config::{ConfigError, ExperimentConfig, Transport};

pub const RANK_ENV: &str = "TASKMESH_RANK";
pub const HEAD_ENV: &str = "TASKMESH_HEAD_ADDR";
pub const HANDLERS_ENV: &str = "TASKMESH_HANDLERS";
pub const TRACE_DIR_ENV: &str = "TASKMESH_TRACE_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("{0}")]
    Failed(String),
}

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// How TCP mode starts worker processes.
#[derive(Clone, Debug)]
pub struct Launcher {
    /// Executable that understands the `worker` subcommand.
    pub worker_exe: PathBuf,
    pub connect_timeout: Duration,
    /// How long to wait for workers to exit after the run finished.
    pub exit_timeout: Duration,
}

impl Launcher {
    pub fn current() -> Result<Self, CliError> {
        Ok(Launcher::new(std::env::current_exe().map_err(io_err("locating own executable"))?))
    }

    pub fn new(worker_exe: PathBuf) -> Self {
        Launcher { worker_exe, connect_timeout: Duration::from_secs(30), exit_timeout: Duration::from_secs(10) }
    }
}

pub fn worker_options(handlers: Option<usize>) -> WorkerOptions {
    let d = WorkerOptions::default();
    WorkerOptions { handlers: handlers.unwrap_or(d.handlers), ..d }
}

/// Generated program plus how its buffers were sized.
pub fn build_program(cfg: &ExperimentConfig) -> Result<(Program, Sizing), CliError> {
    let spec = cfg.bench_spec();
    let (program, sizing) = generate_sized(&spec, &cfg.run_config().cost_model())?;
    if sizing.clamped {
        log::warn!("latency alone exceeds the communication budget at ccr {}; buffers clamped to 1 byte", spec.ccr);
    }
    Ok((program, sizing))
}

/// Execute one run. With `trace_dir`, writes graph, schedule, traces, frame
/// captures and the report there.
pub fn run_once(
    cfg: &ExperimentConfig,
    program: &Program,
    launcher: &Launcher,
    trace_dir: Option<&Path>,
) -> Result<RunOutcome, CliError> {
    let rc = cfg.run_config();
    if let Some(dir) = trace_dir {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    let capture = |name: &str| -> Result<Option<Capture>, CliError> {
        trace_dir
            .map(|d| {
                let p = d.join(name);
                Capture::create(&p).map_err(io_err(format!("creating {}", p.display())))
            })
            .transpose()
    };
    let cap = capture("frames.0.tmf")?;
    let out = match cfg.transport {
        Transport::Sim => run_sim_captured(program, &rc, &cfg.sim_options(), cap.clone())?,
        Transport::Threads => run_threads_captured(program, &rc, &worker_options(cfg.handlers), cap.clone())?,
        Transport::Tcp => run_tcp(program, &rc, cfg.handlers, launcher, trace_dir, cap.clone())?,
    };
    if let Some(c) = cap {
        c.flush().map_err(io_err("flushing frame capture"))?;
    }
    if let Some(dir) = trace_dir {
        write_trace_dir(dir, program, &rc, &out)?;
    }
    Ok(out)
}

fn write_trace_dir(dir: &Path, program: &Program, rc: &RunConfig, out: &RunOutcome) -> Result<(), CliError> {
    let graph = derive_edges(program).map_err(RunError::from)?;
    let (_, schedule) = prepare(program, rc)?;
    let files = [
        ("graph.txt", graph.to_text()),
        ("schedule.csv", schedule.to_csv()),
        ("events.0.csv", out.trace.events_csv()),
        ("data.csv", out.trace.data_csv()),
        ("tasks.csv", out.trace.tasks_csv()),
        ("report.txt", out.report.to_text()),
        ("channels.txt", format!("{}\n", rc.channels)),
    ];
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(io_err(format!("writing {}", p.display())))?;
    }
    Ok(())
}

/// Kills still-running workers when dropped.
struct Workers(Vec<Child>);

impl Drop for Workers {
    fn drop(&mut self) {
        for c in &mut self.0 {
            if let Ok(None) = c.try_wait() {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
    }
}

impl Workers {
    fn wait_all(&mut self, timeout: Duration) -> Result<(), CliError> {
        let deadline = Instant::now() + timeout;
        for (i, c) in self.0.iter_mut().enumerate() {
            loop {
                match c.try_wait().map_err(io_err("waiting for worker"))? {
                    Some(s) if s.success() => break,
                    Some(s) => return Err(CliError::Failed(format!("worker {} exited with {s}", i + 1))),
                    None if Instant::now() >= deadline => {
                        return Err(CliError::Failed(format!("worker {} did not exit", i + 1)));
                    }
                    None => thread::sleep(Duration::from_millis(5)),
                }
            }
        }
        Ok(())
    }
}

/// Spawn `n` worker processes pointed at `head`.
pub fn spawn_workers(
    launcher: &Launcher,
    n: usize,
    head: SocketAddr,
    handlers: Option<usize>,
    trace_dir: Option<&Path>,
) -> Result<Vec<Child>, CliError> {
    let mut children = Vec::with_capacity(n);
    for rank in 1..=n {
        let mut cmd = Command::new(&launcher.worker_exe);
        cmd.arg("worker").env(RANK_ENV, rank.to_string()).env(HEAD_ENV, head.to_string()).stdin(Stdio::null());
        if let Some(h) = handlers {
            cmd.env(HANDLERS_ENV, h.to_string());
        }
        if let Some(d) = trace_dir {
            cmd.env(TRACE_DIR_ENV, d);
        }
        match cmd.spawn() {
            Ok(c) => children.push(c),
            Err(e) => {
                drop(Workers(children));
                return Err(io_err(format!("spawning {}", launcher.worker_exe.display()))(e));
            }
        }
    }
    Ok(children)
}

fn run_tcp(
    program: &Program,
    rc: &RunConfig,
    handlers: Option<usize>,
    launcher: &Launcher,
    trace_dir: Option<&Path>,
    capture: Option<Capture>,
) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let port = TcpPort::bind_head("127.0.0.1:0", capture)?;
    let mut workers = Workers(spawn_workers(launcher, rc.workers, port.local_addr(), handlers, trace_dir)?);
    port.wait_for_workers(rc.workers, launcher.connect_timeout)?;
    let startup_us = started.elapsed().as_secs_f64() * 1e6;
    let mut out = run_head(port, program, rc, Trace::new(), started, startup_us)?;
    workers.wait_all(launcher.exit_timeout)?;
    let end = started.elapsed().as_secs_f64() * 1e6;
    out.report.shutdown_us += end - out.report.wall_us;
    out.report.wall_us = end;
    Ok(out)
}

/// Body of the `worker` subcommand: join the head, serve events until told
/// to exit, then dump this node's event trace and frame capture.
pub fn worker_main(rank: u16, head: SocketAddr, handlers: Option<usize>, trace_dir: Option<&Path>) -> Result<(), CliError> {
    if rank == 0 {
        return Err(CliError::Failed("rank 0 is the head; workers start at 1".into()));
    }
    let capture = match trace_dir {
        Some(d) => {
            let p = d.join(format!("frames.{rank}.tmf"));
            Some(Capture::create(&p).map_err(io_err(format!("creating {}", p.display())))?)
        }
        None => None,
    };
    let port = TcpPort::connect_worker(rank, head, Duration::from_secs(30), capture.clone())?;
    let trace = Trace::new();
    let ctx = Arc::new(NodeCtx::new(NodeId(rank), trace.clone()));
    run_worker(port, ctx.clone(), &worker_options(handlers))?;
    if !ctx.exited() {
        return Err(CliError::Failed(format!("worker {rank}: head went away before exit")));
    }
    if let (Some(c), Some(d)) = (capture, trace_dir) {
        c.flush().map_err(io_err("flushing frame capture"))?;
        let p = d.join(format!("events.{rank}.csv"));
        fs::write(&p, trace.events_csv()).map_err(io_err(format!("writing {}", p.display())))?;
    }
    Ok(())
}
