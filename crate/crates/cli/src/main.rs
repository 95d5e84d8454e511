use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use catchain_cli::{run_optimize, run_propagate, run_sweep, run_wigner, CliError, ExperimentConfig, RunSummary, WignerSource};

#[derive(Parser, Debug)]
#[command(name = "catchain", version, about = "Cat-state transfer through an oscillator chain: optimize, replay, sweep")]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `outputs.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Krotov optimization from the configured guess.
    Optimize,
    /// Replay a controls file in the closed and (with a bath) open system.
    Propagate {
        #[arg(long)]
        controls: PathBuf,
    },
    /// Final fidelity over the (lambda, gamma) grid.
    Sweep {
        /// Optimized controls; optimizes first when omitted.
        #[arg(long)]
        controls: Option<PathBuf>,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Wigner function of single sites.
    Wigner {
        #[arg(long, conflicts_with = "density", requires = "time")]
        controls: Option<PathBuf>,
        /// Grid time of the snapshot (with --controls).
        #[arg(long)]
        time: Option<f64>,
        /// Serialized density matrix.
        #[arg(long)]
        density: Option<PathBuf>,
        /// 1-based sites; all when omitted.
        #[arg(long = "site")]
        sites: Vec<usize>,
    },
}

fn run(cli: Cli) -> Result<RunSummary, CliError> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.outputs.directory = out.clone();
    }
    let out = config.outputs.directory.clone();
    match cli.command {
        Command::Optimize => run_optimize(&config, &out),
        Command::Propagate { controls } => run_propagate(&config, &controls, &out),
        Command::Sweep { controls, jobs } => {
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            run_sweep(&config, controls.as_deref(), jobs, &out)
        }
        Command::Wigner { controls, time, density, sites } => {
            let source = match (controls, density) {
                (Some(path), None) => WignerSource::Controls { path, time: time.unwrap_or(config.scenario.t_final) },
                (None, Some(path)) => WignerSource::Density { path },
                _ => return Err(CliError::Input("wigner needs exactly one of --controls or --density".into())),
            };
            run_wigner(&config, &source, &sites, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            if summary.converged == Some(false) {
                log::error!("optimization stopped at J_T = {:e} without reaching the goal", summary.final_jt.unwrap_or(f64::NAN));
            }
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
