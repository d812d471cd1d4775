//! `kolmo`: runs experiments from a config file and writes JSON reports and CSV grids.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kolmo::config::{load, ExperimentConfig, ExperimentKind};
use kolmo::experiment::run;

#[derive(Parser)]
#[command(name = "kolmo", version, about = "Kolmogorov-Fokker-Planck operator toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config; the Langevin preset with defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports and CSV grids.
    #[arg(long, global = true, default_value = "kolmo-out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config resolutions; repeat for several.
    #[arg(long, global = true)]
    resolution: Vec<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Structure of B: Kalman rank, blocks, homogeneous dimension, exponents.
    Analyze,
    /// Closed-form checks of the fundamental solution and a sampled kernel grid.
    Kernel,
    /// Potential norm ratios and the integration-by-parts consistency check.
    Potentials,
    /// Sobolev and Caccioppoli constants on the solution family.
    Verify,
    /// Moser iteration, two-sided and one-sided.
    Moser,
    /// Every experiment listed under `run` in the config.
    Report,
}

impl Command {
    fn kinds(self, cfg: &ExperimentConfig) -> Vec<ExperimentKind> {
        match self {
            Command::Analyze => vec![ExperimentKind::Structure],
            Command::Kernel => vec![ExperimentKind::Kernel],
            Command::Potentials => vec![ExperimentKind::Potentials],
            Command::Verify => vec![ExperimentKind::Sobolev, ExperimentKind::Caccioppoli],
            Command::Moser => vec![ExperimentKind::Moser, ExperimentKind::MoserOneside],
            Command::Report => cfg.experiments.clone(),
        }
    }
}

fn configure(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            load(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentConfig::langevin(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if !cli.resolution.is_empty() {
        cfg.resolutions = cli.resolution.clone();
    }
    Ok(cfg)
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("KOLMO_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| format!("KOLMO_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("KOLMO_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = init_threads().and_then(|()| configure(&cli)).and_then(|cfg| {
        let kinds = cli.command.kinds(&cfg);
        run(&cfg, &kinds, &cli.out).map_err(|e| e.to_string())
    });
    match outcome {
        Ok(report) => {
            for e in &report.experiments {
                println!("{:<14} {}", e.name, if e.verdict { "PASS" } else { "FAIL" });
            }
            println!("report: {}", cli.out.join("report.json").display());
            if report.all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(msg) => {
            eprintln!("kolmo: {msg}");
            ExitCode::from(2)
        }
    }
}
