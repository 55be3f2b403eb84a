mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use softswim::config::RunConfig;

/// Differentiable simulation of a soft swimmer in a learned fluid.
#[derive(Parser, Debug)]
#[command(name = "softswim", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the one in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the one in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel episodes.
    #[arg(long, global = true, env = "SWIMSIM_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the fluid surrogate and write its weights and loss history.
    TrainFluid,
    /// Run one episode and write its trajectory, field snapshots and pressure frames.
    Simulate {
        /// Actuation frequency in Hz.
        #[arg(long, default_value_t = 5.0)]
        omega_hz: f64,
        /// Snapshot interval in steps; 0 writes no field files.
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Optimize the actuation frequency with gradients and with CMA-ES on a matched budget.
    Optimize,
    /// Run one episode per configured frequency and report the travelled distance.
    Sweep,
    /// Time the warmup, forward and backward passes of one episode.
    Bench {
        #[arg(long, default_value_t = 5.0)]
        omega_hz: f64,
    },
    /// Compare tape gradients with central finite differences.
    Gradcheck {
        /// Frequency of the coupled-episode case, overriding the config.
        #[arg(long)]
        omega_hz: Option<f64>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, ExitCode> {
    let mut cfg = match &common.config {
        Some(path) if !path.is_file() => {
            eprintln!("error: config file not found: {}", path.display());
            return Err(ExitCode::from(2));
        }
        Some(path) => RunConfig::load(path).map_err(|e| {
            eprintln!("error: {e}");
            ExitCode::from(2)
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli, cfg: RunConfig) -> anyhow::Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))?;
    match cli.command {
        Command::TrainFluid => commands::train_fluid(&cfg),
        Command::Simulate { omega_hz, snapshot_every } => {
            let mut cfg = cfg;
            if let Some(k) = snapshot_every {
                cfg.snapshots.every = k;
            }
            commands::simulate(&cfg, omega_hz)
        }
        Command::Optimize => commands::optimize(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Bench { omega_hz } => commands::bench(&cfg, omega_hz),
        Command::Gradcheck { omega_hz } => {
            let mut cfg = cfg;
            if let Some(hz) = omega_hz {
                cfg.gradcheck.omega_hz = hz;
            }
            commands::gradcheck(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load_config(&cli.common) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    match run(cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
