//! Command-line front end: parses arguments, loads the JSON configuration
//! and dispatches to the report commands.  All substance lives in the
//! library; this file only wires it to the shell.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sns_chain::report::{self, FigureKind};
use sns_chain::ChainError;

#[derive(Parser)]
#[command(
    name = "sns-chain",
    version,
    about = "Oscillator chain between two heat baths: exact covariances, anharmonic corrections, stochastic validation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact harmonic stationary state: covariance blocks, temperature profile, currents
    Harmonic(Common),
    /// Structured first-order corrections: bond current and temperature profile
    Perturb(Common),
    /// First-order current correction swept over chain lengths
    CurrentScan {
        #[command(flatten)]
        common: Common,
        /// Comma-separated chain lengths, e.g. 10,20,40
        #[arg(long = "N-list", value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
    },
    /// Figure-ready temperature-profile data
    Profile {
        #[command(flatten)]
        common: Common,
        /// Which contribution to emit
        #[arg(long, value_enum)]
        figure: Figure,
    },
    /// Monte Carlo covariance estimate with error bars (needs a "sim" block)
    Simulate(Common),
    /// Cross-method verification battery; exits 1 if any check fails
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Figure {
    Y1,
    Y2,
}

fn run(cli: Cli) -> Result<ExitCode, ChainError> {
    let (common, files) = match &cli.command {
        Command::Harmonic(common) => {
            let config = report::load_config(&common.config)?;
            (common, report::run_harmonic(&config.params, &common.out)?)
        }
        Command::Perturb(common) => {
            let config = report::load_config(&common.config)?;
            (common, report::run_perturb(&config.params, &common.out)?)
        }
        Command::CurrentScan { common, n_list } => {
            let config = report::load_config(&common.config)?;
            (
                common,
                report::run_current_scan(&config.params, n_list, &common.out)?,
            )
        }
        Command::Profile { common, figure } => {
            let config = report::load_config(&common.config)?;
            let kind = match figure {
                Figure::Y1 => FigureKind::Y1,
                Figure::Y2 => FigureKind::Y2,
            };
            (
                common,
                report::run_profile(&config.params, kind, &common.out)?,
            )
        }
        Command::Simulate(common) => {
            let config = report::load_config(&common.config)?;
            let sim = config.sim.as_ref().ok_or_else(|| {
                ChainError::Config("simulate needs a \"sim\" block in the configuration".into())
            })?;
            (
                common,
                report::run_simulate(&config.params, sim, &common.out)?,
            )
        }
        Command::Verify(common) => {
            let config = report::load_config(&common.config)?;
            let summary =
                report::run_verify(&config.params, config.sim.as_ref(), Some(&common.out))?;
            print!("{}", report::render_verify(&summary));
            return Ok(if summary.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            });
        }
    };
    for file in files {
        println!("wrote {}", file.display());
    }
    let _ = common;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
