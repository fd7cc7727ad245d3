//! `tipi`: batch sessions, pre-adaptation, comparison reports and the live
//! server.
//!
//! Exit codes: 0 success, 2 configuration or startup error, 3 numeric abort.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use tipi_core::baseline::pre_adapt;
use tipi_core::harness::{
    compare, log_file_name, run_batch, run_session_with_timeline, Condition, SessionConfig,
    TrajectoryLog,
};
use tipi_core::sim::PerturbationEvent;
use tipi_core::{Error, Result};
use tipi_service::{bind, serve, ServeConfig};

#[derive(Parser)]
#[command(name = "tipi", version, about = "TiPI-driven sphere robot sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a session and write its JSON Lines log.
    Run {
        /// TOML or JSON session config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// ada or rea
        #[arg(long)]
        condition: Option<Condition>,
        /// Output directory for logs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this many consecutive seeds in parallel, starting at the seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Step-stamped command timeline to replay, as written by `serve`.
        #[arg(long)]
        timeline: Option<PathBuf>,
        /// Stop after this many steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Pre-adapt the controller on an empty table and freeze it.
    PreAdapt {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize every log in a directory per condition.
    Compare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Window of the running TiPI estimate, in steps.
        #[arg(long, default_value_t = 2000)]
        window: usize,
    },
    /// Serve a live session over WebSocket.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Wall-clock milliseconds per tick.
        #[arg(long, default_value_t = 50)]
        tick_ms: u64,
        /// Directory for segment logs and command timelines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<SessionConfig> {
    match path {
        Some(p) => SessionConfig::read(p),
        None => Ok(SessionConfig::default()),
    }
}

fn run(
    config: Option<PathBuf>,
    seed: Option<u64>,
    condition: Option<Condition>,
    out: Option<PathBuf>,
    seeds: u64,
    timeline: Option<PathBuf>,
    steps: Option<u64>,
) -> Result<()> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(condition) = condition {
        cfg.condition = condition;
    }
    if out.is_some() {
        cfg.output = out;
    }
    if seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()));
    }
    let timeline: Vec<PerturbationEvent> = match &timeline {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("timeline {}: {e}", path.display())))?
        }
        None => Vec::new(),
    };
    let logs = if seeds == 1 {
        vec![run_session_with_timeline(&cfg, &timeline, steps)]
    } else {
        if !timeline.is_empty() || steps.is_some() {
            return Err(Error::Config("--timeline and --steps apply to single runs".into()));
        }
        let cfgs: Vec<SessionConfig> = (0..seeds)
            .map(|k| SessionConfig {
                seed: cfg.seed + k,
                ..cfg.clone()
            })
            .collect();
        run_batch(&cfgs)
    };
    let mut first_error = None;
    for log in logs {
        match log {
            Ok(log) => print_summary(&log),
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(e) => eprintln!("error: {e}"),
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn print_summary(log: &TrajectoryLog) {
    let cfg = &log.header.config;
    let s = log.summary.as_ref().expect("finished log has a summary");
    let written = cfg
        .output
        .as_ref()
        .map(|d| d.join(log_file_name(cfg)).display().to_string())
        .unwrap_or_else(|| "not written".into());
    println!(
        "{} seed {}: {} steps, rms xi {:.4}, params {} -> {} ({written})",
        cfg.condition,
        cfg.seed,
        s.steps,
        log.rms_xi(),
        &s.digest_start[..12],
        &s.digest_end[..12],
    );
}

fn compare_dir(input: &Path, out: &Path, window: usize) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::Config(format!("{}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let logs = paths
        .iter()
        .map(|p| TrajectoryLog::read(p))
        .collect::<Result<Vec<_>>>()?;
    let report = compare(&logs, window)?;
    std::fs::write(out, report.to_csv()).map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
    print!("{}", report.to_table());
    Ok(())
}

fn serve_live(config: Option<PathBuf>, addr: SocketAddr, tick_ms: u64, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(config.as_deref())?;
    if out.is_some() {
        cfg.output = out;
    }
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| Error::Startup(format!("tokio runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = bind(addr).await?;
        eprintln!("serving on http://{addr} (ws at /ws), Ctrl-C to stop");
        let serve_cfg = ServeConfig {
            session: cfg,
            tick: Duration::from_millis(tick_ms),
        };
        serve(serve_cfg, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            condition,
            out,
            seeds,
            timeline,
            steps,
        } => run(config, seed, condition, out, seeds, timeline, steps),
        Command::PreAdapt {
            seed,
            steps,
            out,
            config,
        } => load_config(config.as_deref())
            .and_then(|cfg| pre_adapt(&cfg, seed, steps))
            .and_then(|frozen| {
                frozen.write(&out)?;
                println!("{} ({})", out.display(), frozen.digest());
                Ok(())
            }),
        Command::Compare { input, out, window } => compare_dir(&input, &out, window),
        Command::Serve {
            config,
            bind,
            tick_ms,
            out,
        } => serve_live(config, bind, tick_ms, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
