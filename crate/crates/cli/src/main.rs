//! `rspec`: batch front end for the renewal-spectra library.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when a numerical
//! gate fails, 1 for anything else (I/O).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use renewal_spectra::rng::WORKERS_ENV;

use crate::report::{Outcome, Sink};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Gate(String),
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Gate(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Gate(m) => write!(f, "numerical gate failed: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<renewal_spectra::Error> for CliError {
    fn from(e: renewal_spectra::Error) -> Self {
        use renewal_spectra::Error as E;
        match e {
            E::Gate(m) => CliError::Gate(m),
            e if e.is_gate() => CliError::Gate(e.to_string()),
            E::Invalid(m) | E::Config(m) => CliError::Config(m),
            other => CliError::Other(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rspec",
    version,
    about = "Atoms at the bottom of a spectrum: estimators, renewal simulation, spin-boson bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML; `include = [...]` pulls in shared tables).
    #[arg(long, short)]
    config: PathBuf,
    /// Result JSON path; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Directory for CSV series.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, env = WORKERS_ENV, default_value_t = 0)]
    workers: usize,
    /// Omit the generation time so that reruns are byte-identical.
    #[arg(long)]
    no_timestamp: bool,
    /// Tolerance override `key=value`; repeatable.
    #[arg(long = "tolerance", value_name = "KEY=VALUE")]
    tolerances: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate log Z_t and tilted moments of a measure.
    Transform(Common),
    /// Estimate the atom at the support infimum along a t-schedule.
    Atom(Common),
    /// Second-order estimate of the inverse moment ∫ μ(dx)/(x − E).
    InverseMoment(Common),
    /// Simulate the renewal transform as an M/G/∞ queue.
    RenewalSim(Common),
    /// Check the Stieltjes identity against simulated first cycles.
    Stieltjes(Common),
    /// Classify the behaviour of μ at E from simulations at T and 2T.
    Classify(Common),
    /// Spectral diagnostics of a rank-one perturbation.
    Rankone(Common),
    /// Truncated diagonalization of a spin-boson model.
    SpinbosonExact(Common),
    /// Feynman–Kac estimates of log Z_T and correlation tables.
    SpinbosonFk(Common),
    /// Upper and lower bounds on log(1/ρ) with exact references.
    SpinbosonBounds(Common),
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::Transform(c) => ("transform", c),
            Command::Atom(c) => ("atom", c),
            Command::InverseMoment(c) => ("inverse-moment", c),
            Command::RenewalSim(c) => ("renewal-sim", c),
            Command::Stieltjes(c) => ("stieltjes", c),
            Command::Classify(c) => ("classify", c),
            Command::Rankone(c) => ("rankone", c),
            Command::SpinbosonExact(c) => ("spinboson-exact", c),
            Command::SpinbosonFk(c) => ("spinboson-fk", c),
            Command::SpinbosonBounds(c) => ("spinboson-bounds", c),
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let (name, common) = cli.command.split();
    let mut table = config::load_table(&common.config)?;
    config::apply_overrides(&mut table, common.seed, &common.tolerances)?;
    let inputs = serde_json::to_value(&table).map_err(|e| CliError::Other(e.to_string()))?;
    let cfg = config::parse(table)?;
    if let Some(c) = &cfg.command {
        if c != name {
            return Err(CliError::Config(format!("config is for `{c}`, invoked as `{name}`")));
        }
    }
    let w = common.workers;
    let outcome: Outcome = match name {
        "transform" => commands::transform(&cfg)?,
        "atom" => commands::atom(&cfg)?,
        "inverse-moment" => commands::inverse_moment(&cfg)?,
        "renewal-sim" => commands::renewal_sim(&cfg, w)?,
        "stieltjes" => commands::stieltjes(&cfg, w)?,
        "classify" => commands::classify(&cfg, w)?,
        "rankone" => commands::rankone(&cfg)?,
        "spinboson-exact" => commands::spinboson_exact(&cfg)?,
        "spinboson-fk" => commands::spinboson_fk(&cfg, w)?,
        "spinboson-bounds" => commands::spinboson_bounds_cmd(&cfg, w)?,
        _ => unreachable!("every subcommand is dispatched"),
    };
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    let sink = Sink { out: common.out.as_deref(), csv_dir: common.csv_dir.as_deref(), timestamp: !common.no_timestamp };
    report::write(name, &inputs, &outcome, &sink)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rspec: {e}");
            ExitCode::from(e.code())
        }
    }
}
