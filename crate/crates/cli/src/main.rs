//! `phinet`: run the dynamics, bifurcation, alignment and training experiments
//! from TOML documents and write CSV or JSON.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod output;

use commands::Output;
use error::{CliError, CliResult};

/// Environment variable that caps the worker threads used by grid commands.
const THREADS_VAR: &str = "PHINET_THREADS";

#[derive(Parser)]
#[command(name = "phinet", version, about = "Linear PhiNet / SimSiam dynamics laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// TOML run document.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set rho=0.01` or `--set psi_range=[-0.1,0.3]`. Repeatable; wins over --config.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(short, long, value_enum, default_value = "csv")]
    format: Format,
    /// RNG seed for commands that sample.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the matrix gradient flow.
    Flow(Common),
    /// Integrate the (φ, ψ, γ), reduced (ψ, γ) or SimSiam ψ dynamics.
    Eigen(Common),
    /// Equilibria and regime at one or more weight decays.
    Regime(Common),
    /// Sink counts over a log-spaced ρ range with located boundaries.
    Sweep(Common),
    /// Reduced vector field on a grid.
    Field(Common),
    /// Nullclines of the reduced system.
    Nullclines(Common),
    /// Basin-of-attraction labels on a grid.
    Basin(Common),
    /// Commutator decay and invariant-parabola fit along the matrix flow.
    Align(Common),
    /// Train the toy model with SGD.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also write the final model state as JSON here.
        #[arg(long)]
        final_state: Option<PathBuf>,
    },
    /// Compare exact-expectation SGD against the integrated flow for several learning rates.
    FlowAgreement(Common),
}

type Runner = fn(toml::Table) -> CliResult<Output>;

impl Command {
    fn parts(&self) -> (&Common, Runner, Option<&'static str>) {
        use commands::*;
        match self {
            Command::Flow(c) => (c, dynamics::flow, Some("seed")),
            Command::Eigen(c) => (c, dynamics::eigen, None),
            Command::Regime(c) => (c, regime::regime, None),
            Command::Sweep(c) => (c, regime::sweep, None),
            Command::Field(c) => (c, portrait::field, None),
            Command::Nullclines(c) => (c, portrait::nullclines, None),
            Command::Basin(c) => (c, portrait::basin, None),
            Command::Align(c) => (c, align::align, Some("seed")),
            Command::Train { common, .. } => (common, train::train, Some("seed")),
            Command::FlowAgreement(c) => (c, train::agreement, Some("trainer.seed")),
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::validation(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::validation(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let (common, runner, seed_key) = cli.command.parts();
    let mut table = config::read_table(common.config.as_deref())?;
    for s in &common.set {
        config::apply_override(&mut table, s)?;
    }
    if let Some(seed) = common.seed {
        let key = seed_key.ok_or_else(|| CliError::validation("this subcommand takes no seed"))?;
        config::apply_override(&mut table, &format!("{key}={seed}"))?;
    }
    let final_state_path = match &cli.command {
        Command::Train { final_state, .. } => final_state.as_deref(),
        _ => None,
    };
    for p in [common.output.as_deref(), final_state_path].into_iter().flatten() {
        check_writable(p)?;
    }

    // Everything is computed before the first byte is written.
    let out = runner(table)?;
    let body = match common.format {
        Format::Csv => out.table.to_csv()?,
        Format::Json => output::to_json(&out.json)?,
    };
    let state = match (final_state_path, &out.final_state) {
        (Some(p), Some(s)) => Some((p, output::to_json(s)?)),
        _ => None,
    };
    output::write(common.output.as_deref(), &body)?;
    if let Some((p, bytes)) = state {
        output::write(Some(p), &bytes)?;
    }
    Ok(())
}

fn check_writable(path: &Path) -> CliResult<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(CliError::Io(format!("{}: directory does not exist", parent.display())));
    }
    if path.is_dir() {
        return Err(CliError::Io(format!("{}: is a directory", path.display())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("phinet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
