use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use taskmesh_cli::exec::{self, CliError, HANDLERS_ENV, HEAD_ENV, RANK_ENV, TRACE_DIR_ENV};
use taskmesh_cli::{cmd_calibrate, cmd_check, cmd_run, cmd_sweep, cmd_tmf_dump, Axis, ExperimentConfig, Launcher};

#[derive(Parser)]
#[command(name = "taskmesh", version, about = "Run and check taskmesh experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment config file (`key = value` lines).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set nodes=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// CSV destination; overrides `output` in the config.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment `repeats` times and write CSV rows plus a summary.
    Run(ConfigArgs),
    /// Run an experiment for each value along one axis.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
        /// nodes, ccr or iterations.
        #[arg(long)]
        axis: Axis,
        /// Comma-separated values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Validate a trace directory written by a run with `trace_dir` set.
    Check { dir: PathBuf },
    /// Print the frames in a capture file.
    TmfDump { file: PathBuf },
    /// Measure busy-loop iterations for a target task duration.
    Calibrate {
        #[arg(long, default_value_t = 50.0)]
        target_ms: f64,
        #[arg(long, default_value_t = 5)]
        reruns: usize,
    },
    /// Serve as a worker node for a TCP run. Started by the head.
    #[command(hide = true)]
    Worker {
        #[arg(long, env = RANK_ENV)]
        rank: u16,
        #[arg(long, env = HEAD_ENV)]
        head: SocketAddr,
        #[arg(long, env = HANDLERS_ENV)]
        handlers: Option<usize>,
        #[arg(long, env = TRACE_DIR_ENV)]
        trace_dir: Option<PathBuf>,
    },
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Failed(format!("reading {}: {e}", p.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    for s in &args.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Failed(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| CliError::Failed(format!("--set {s}: {e}")))?;
    }
    if let Some(o) = &args.output {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(dest: Option<&Path>, text: &str) -> Result<(), CliError> {
    match dest {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Failed(format!("writing {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main_inner(cli: Cli) -> Result<bool, CliError> {
    match cli.cmd {
        Cmd::Run(args) => {
            let cfg = load(&args)?;
            emit(cfg.output.as_deref(), &cmd_run(&cfg, &Launcher::current()?)?)?;
        }
        Cmd::Sweep { args, axis, values } => {
            let cfg = load(&args)?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            emit(cfg.output.as_deref(), &cmd_sweep(&cfg, axis, &values, &Launcher::current()?)?)?;
        }
        Cmd::Check { dir } => {
            let v = cmd_check(&dir)?;
            print!("{}", v.render());
            return Ok(v.passed());
        }
        Cmd::TmfDump { file } => print!("{}", cmd_tmf_dump(&file)?),
        Cmd::Calibrate { target_ms, reruns } => {
            if !(target_ms > 0.0 && target_ms.is_finite()) {
                return Err(CliError::Failed("target_ms must be positive".into()));
            }
            print!("{}", cmd_calibrate(Duration::from_secs_f64(target_ms / 1e3), reruns).render());
        }
        Cmd::Worker { rank, head, handlers, trace_dir } => {
            exec::worker_main(rank, head, handlers, trace_dir.as_deref())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
