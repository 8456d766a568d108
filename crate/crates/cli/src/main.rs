mod commands;
mod data;
mod error;
mod hypothesis;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

/// Robust DPD Wald-type tests for fixed-design normal and Poisson GLMs.
#[derive(Parser, Debug)]
#[command(name = "dpdwald", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Plain-text `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// normal or poisson.
    #[arg(long)]
    family: Option<String>,
    /// Comma-separated τ grid.
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("family", self.family.clone()),
            ("tau", self.tau.clone()),
            ("alpha", self.alpha.map(|a| a.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ]
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the MDPDE for each τ; writes JSON.
    Fit {
        #[command(flatten)]
        common: Common,
        /// CSV with columns y,x1,...,xk.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Wald-type test of a linear hypothesis on β for each τ; writes JSON.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reuse estimates from a `fit` output instead of refitting.
        #[arg(long)]
        fit: Option<PathBuf>,
        /// `h`, `h=value` (one-based) or `L:l0`, e.g. `1,0;0,1:1,1`.
        #[arg(long)]
        hypothesis: Option<String>,
    },
    /// Contiguous power tables; writes CSV.
    PowerTable {
        #[command(flatten)]
        common: Common,
        /// Poisson design 1-4 or `all`.
        #[arg(long)]
        design: Option<String>,
        /// Normal error variance under the null.
        #[arg(long)]
        phi0: Option<f64>,
    },
    /// Second-order influence function of the test statistic; writes CSV (t, tau, value).
    IfProfile {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Power influence function; writes CSV (t, tau, value).
    PifProfile {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Size of the contiguous shift along the restricted directions.
        #[arg(long)]
        shift: Option<f64>,
    },
    /// Seeded Monte Carlo rejection rates; writes CSV, or JSON if `--out` ends in `.json`.
    Mc {
        #[command(flatten)]
        common: Common,
        /// Reference design 1-4 or an `x1,...,xk` CSV.
        #[arg(long)]
        design: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// `null`, `fixed:s`, `contiguous:s`, `contaminated-level:eps:shift` or `contaminated-power:s:eps:shift`.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        hypothesis: Option<String>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ProfileArgs {
    /// Reference design 1-4 or an `x1,...,xk` CSV.
    #[arg(long)]
    design: Option<String>,
    /// Rows of the reference design.
    #[arg(long)]
    n: Option<usize>,
    /// One-based observation index, or `all`.
    #[arg(long)]
    direction: Option<String>,
    #[arg(long)]
    hypothesis: Option<String>,
    /// Comma-separated null parameter (β, then φ for normal).
    #[arg(long)]
    theta0: Option<String>,
}

impl ProfileArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("design", self.design.clone()),
            ("n", self.n.map(|v| v.to_string())),
            ("direction", self.direction.clone()),
            ("hypothesis", self.hypothesis.clone()),
            ("theta0", self.theta0.clone()),
        ]
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("DPDWALD_THREADS") {
        let threads: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|t| *t > 0)
            .ok_or_else(|| CliError::Input(format!("DPDWALD_THREADS must be a positive integer, got {raw:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fit { common, data } => {
            let mut flags = common.flags();
            flags.push(("data", data.map(|p| p.display().to_string())));
            commands::fit(&common, flags)
        }
        Command::Test {
            common,
            data,
            fit,
            hypothesis,
        } => {
            let mut flags = common.flags();
            flags.push(("data", data.map(|p| p.display().to_string())));
            flags.push(("fit", fit.map(|p| p.display().to_string())));
            flags.push(("hypothesis", hypothesis));
            commands::test(&common, flags)
        }
        Command::PowerTable { common, design, phi0 } => {
            let mut flags = common.flags();
            flags.push(("design", design));
            flags.push(("phi0", phi0.map(|v| v.to_string())));
            commands::power_table(&common, flags)
        }
        Command::IfProfile { common, profile } => {
            let mut flags = common.flags();
            flags.extend(profile.flags());
            commands::profile(&common, flags, commands::ProfileKind::If2)
        }
        Command::PifProfile { common, profile, shift } => {
            let mut flags = common.flags();
            flags.extend(profile.flags());
            flags.push(("shift", shift.map(|v| v.to_string())));
            commands::profile(&common, flags, commands::ProfileKind::Pif)
        }
        Command::Mc {
            common,
            design,
            n,
            reps,
            seed,
            scenario,
            hypothesis,
        } => {
            let mut flags = common.flags();
            flags.push(("design", design));
            flags.push(("n", n.map(|v| v.to_string())));
            flags.push(("reps", reps.map(|v| v.to_string())));
            flags.push(("seed", seed.map(|v| v.to_string())));
            flags.push(("scenario", scenario));
            flags.push(("hypothesis", hypothesis));
            commands::mc(&common, flags)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
