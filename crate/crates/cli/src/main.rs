use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use riccilab::io::{self, CommandOutcome, DecayQuantity};
use riccilab::Result;

/// Numerical laboratory for Ricci flow, dynamical λ-functionals and drift spectra.
///
/// Exit status: 0 when every assertion of the command holds, 1 when an
/// assertion fails, 2 on invalid input or a refused run directory.
#[derive(Debug, Parser)]
#[command(name = "riccilab", version)]
struct Cli {
    /// Experiment config. For analysis commands it replaces the analysis
    /// sections of the run's own config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `output.run_dir` of the config.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Overrides the command's principal tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the configured Ricci flow and record checkpoints.
    RunFlow,
    /// λ, λ^s_dyn and λ^∞_dyn along a recorded run.
    Functionals,
    /// Drift-Laplacian spectrum along the coupled run and the eigenvalue bound.
    Spectrum,
    /// Refinement studies of the evolution identities.
    VerifyIdentities,
    /// Decay fits and a-priori estimates.
    FitDecay {
        /// sup_ric, sup_rm, volume or conjugate_bounds.
        #[arg(long, default_value = "sup_ric")]
        quantity: DecayQuantity,
    },
    /// Sharpness table of the shrinking Gaussian soliton.
    Gaussian {
        #[arg(long, default_value_t = 1.0)]
        u0: f64,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Output CSV; defaults to `gaussian.csv` in the run directory or the
        /// working directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_dir(cli: &Cli) -> Result<&Path> {
    cli.run_dir
        .as_deref()
        .ok_or_else(|| riccilab::Error::InvalidArgument("--run-dir is required".into()))
}

fn execute(cli: &Cli) -> Result<CommandOutcome> {
    io::init_threads()?;
    match &cli.command {
        Command::RunFlow => {
            let config = cli
                .config
                .as_deref()
                .ok_or_else(|| riccilab::Error::InvalidArgument("--config is required".into()))?;
            io::cmd_run_flow(config, cli.run_dir.as_deref(), cli.tol)
        }
        Command::Functionals => io::cmd_functionals(&io::open_run(run_dir(cli)?, cli.config.as_deref())?, cli.tol),
        Command::Spectrum => io::cmd_spectrum(&io::open_run(run_dir(cli)?, cli.config.as_deref())?, cli.tol),
        Command::VerifyIdentities => io::cmd_verify_identities(&io::open_run(run_dir(cli)?, cli.config.as_deref())?),
        Command::FitDecay { quantity } => {
            io::cmd_fit_decay(&io::open_run(run_dir(cli)?, cli.config.as_deref())?, *quantity, cli.tol)
        }
        Command::Gaussian { u0, t0, samples, dim, out } => {
            let out = match (out, &cli.run_dir) {
                (Some(o), _) => o.clone(),
                (None, Some(d)) => d.join("gaussian.csv"),
                (None, None) => PathBuf::from("gaussian.csv"),
            };
            io::cmd_gaussian(*dim, *u0, *t0, *samples, &out, cli.tol)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(outcome) => {
            for a in &outcome.artifacts {
                println!("wrote {}", a.display());
            }
            if outcome.pass {
                println!("PASS {}", outcome.summary);
                ExitCode::SUCCESS
            } else {
                println!("FAIL {}", outcome.summary);
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}
