//! `iwdg`: command-line driver. Every subcommand reads one JSON config,
//! validates it in full, computes, and only then writes its output files.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{RunConfig, VerifyBlock};
use output::Header;

#[derive(Debug)]
pub enum CliError {
    /// Exit 1.
    Config(String),
    /// Exit 2.
    Cap(String),
    /// Exit 4: the computation itself failed.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Cap(_) => 2,
            CliError::Runtime(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error {m}"),
            CliError::Cap(m) => write!(f, "resource cap: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

const ACCEPTANCE_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "iwdg", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("IWDG_GIT_DESCRIBE"), ")"))]
#[command(
    about = "Exact and Monte Carlo checks of cumulant decay and pattern CLTs for the Ising model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "IWDG_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Partition function, spin products and exact cumulants by enumeration.
    Exact,
    /// Markov chain samples and spin-product estimates.
    Sample,
    /// Estimated joint cumulants from a chain.
    Cumulants,
    /// Spanning-tree and Steiner lengths of a terminal set.
    Treelen,
    /// Weighted dependency graph inequality on an exact cumulant table.
    WdgCheck,
    /// Pattern occurrences in given configurations.
    PatternCount,
    /// Expansion identities against enumeration.
    VerifyExpansions {
        /// Perturb every representation-side sum by 1e-6 (harness self-test).
        #[arg(long)]
        force_failure: bool,
    },
    /// Replicated normality experiment.
    Clt,
    /// Variance growth of a global pattern count.
    VarianceScaling,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Exact => "exact",
            Command::Sample => "sample",
            Command::Cumulants => "cumulants",
            Command::Treelen => "treelen",
            Command::WdgCheck => "wdg-check",
            Command::PatternCount => "pattern-count",
            Command::VerifyExpansions { .. } => "verify-expansions",
            Command::Clt => "clt",
            Command::VarianceScaling => "variance-scaling",
        }
    }

    fn stochastic(self) -> bool {
        matches!(
            self,
            Command::Sample | Command::Cumulants | Command::Clt | Command::VarianceScaling
        )
    }
}

/// Applies command-line overrides and defaults, giving the config recorded
/// in every output header.
fn resolve(mut cfg: RunConfig, cli: &Cli) -> RunConfig {
    if cli.command.stochastic() {
        cfg.seed = Some(cli.seed.or(cfg.seed).unwrap_or(0));
    }
    if let Command::VerifyExpansions { force_failure } = cli.command {
        let block = cfg
            .verify_expansions
            .get_or_insert_with(VerifyBlock::default);
        if force_failure {
            block.perturb = 1e-6;
        }
    }
    cfg
}

fn run(cli: &Cli) -> Result<Option<String>, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("at --config: a configuration file is required".into()))?;
    let cfg = resolve(config::load(path)?, cli);
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("at --workers: must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let header = Header {
        command: cli.command.name(),
        config: &cfg,
    };
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let outcome = match cli.command {
        Command::Exact => commands::exact(&cfg, &header),
        Command::Sample => commands::sample(&cfg, &header),
        Command::Cumulants => commands::cumulants(&cfg, &header),
        Command::Treelen => commands::treelen(&cfg, &header),
        Command::WdgCheck => commands::wdg_check(&cfg, &header),
        Command::PatternCount => commands::pattern_count(&cfg, &header, &base),
        Command::VerifyExpansions { .. } => commands::verify_expansions(&cfg, &header),
        Command::Clt => commands::clt(&cfg, &header),
        Command::VarianceScaling => commands::variance_scaling(&cfg, &header),
    }?;
    for p in output::write_all(&cli.out, outcome.artifacts)? {
        println!("{}", p.display());
    }
    Ok(outcome.failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(reason)) => {
            eprintln!("check failed: {reason}");
            ExitCode::from(ACCEPTANCE_FAILURE)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
