//! `aedes`: simulation, calibration and risk-map runs driven by TOML configs.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "aedes",
    version,
    about = "Aedes life-cycle, dengue transmission and risk-map tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the life-cycle (or, with `[epi]`, the transmission) model.
    Simulate(Common),
    /// Compare the reduced ODE against the integral-form oracle.
    OracleCheck(Common),
    /// Particle-filter estimate of capacity and biting rate from weekly cases.
    FitPf(Common),
    /// Fit the capacity-on-precipitation model.
    FitCapacity(Common),
    /// Inverse-Gaussian fit of per-location biting rates.
    FitBites(Common),
    /// Poisson scaling between trap counts and simulated adults.
    FitTraps(Common),
    /// Train the outbreak-risk model from labeled weekly series.
    TrainRisk(Common),
    /// Daily risk rasters over a gridded climate.
    Riskmap(Common),
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numeric(String),
}

impl From<aedes_core::Error> for CliError {
    fn from(e: aedes_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numeric(m) => m,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => commands::simulate(c),
        Command::OracleCheck(c) => commands::oracle_check(c),
        Command::FitPf(c) => commands::fit_pf(c),
        Command::FitCapacity(c) => commands::fit_capacity(c),
        Command::FitBites(c) => commands::fit_bites(c),
        Command::FitTraps(c) => commands::fit_traps(c),
        Command::TrainRisk(c) => commands::train_risk(c),
        Command::Riskmap(c) => commands::riskmap(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
