//! Command-line front end: run grids, re-aggregate runs, validate configs and
//! serve the local LLM stub.
//!
//! Exit codes: 0 success, 1 runtime error, 2 invalid configuration or usage,
//! 3 run finished but some rounds failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use disclosure_sim::experiment::{expand_grid, run_experiment_with, ExperimentConfig};
use disclosure_sim::llm::stub::{StubMode, StubServer};
use disclosure_sim::metrics::write_summary_csv;
use disclosure_sim::report::{report, GroupBy};
use disclosure_sim::{AgentBackend, Error, RationalBayesParams};

#[derive(Parser)]
#[command(name = "disclosure-sim", version, about = "Disclosure strategies in second-price auctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    OracleTruthful,
    ScriptedPaper,
    RationalBayes,
    Llm,
}

impl From<BackendArg> for AgentBackend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::OracleTruthful => AgentBackend::OracleTruthful,
            BackendArg::ScriptedPaper => AgentBackend::scripted(),
            BackendArg::RationalBayes => AgentBackend::RationalBayes(RationalBayesParams::default()),
            BackendArg::Llm => AgentBackend::Llm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Strategy,
    Threshold,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum StubModeArg {
    Scripted,
    Malformed,
    OutOfRange,
    Throttled,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment grid.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Experiment seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the config's backends; repeatable.
        #[arg(long, value_enum)]
        backend: Vec<BackendArg>,
        /// Rounds per cell (overrides the config).
        #[arg(long)]
        rounds: Option<u64>,
        /// Base URL of the chat-completions endpoint (overrides the config).
        #[arg(long)]
        base_url: Option<String>,
    },
    /// Re-aggregate a finished run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "threshold")]
        group_by: GroupArg,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file and print its grid.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the local chat-completions stub until interrupted.
    StubServer {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8089)]
        port: u16,
        #[arg(long, value_enum, default_value = "scripted")]
        mode: StubModeArg,
        /// Failing requests per prompt for the malformed and throttled modes.
        #[arg(long, default_value_t = 2)]
        fail_first: u32,
    },
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn load(config: &Path) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::load(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, backend, rounds, base_url } => {
            let mut ec = match load(&config) {
                Ok(ec) => ec,
                Err(e) => return exit_for(&e),
            };
            if let Some(out) = out {
                ec.output_dir = out;
            }
            if let Some(seed) = seed {
                ec.experiment_seed = seed;
            }
            if !backend.is_empty() {
                ec.backends = backend.into_iter().map(AgentBackend::from).collect();
            }
            if let Some(r) = rounds {
                ec.rounds_per_config = r;
            }
            if let Some(url) = base_url {
                ec.llm.get_or_insert_with(Default::default).base_url = url;
            }
            let result = run_experiment_with(&ec, |c| {
                eprintln!(
                    "{}{}: ok={} failed={}",
                    c.cell.config_id,
                    if c.resumed { " (reused)" } else { "" },
                    c.summary.rounds_ok,
                    c.summary.rounds_failed
                );
            });
            match result {
                Ok(m) => {
                    println!("{}", ec.output_dir.join(&m.summary_file).display());
                    if m.total_failed() > 0 {
                        eprintln!("{} rounds failed", m.total_failed());
                        ExitCode::from(3)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::Report { input, group_by, format: FormatArg::Csv, out } => {
            let group = match group_by {
                GroupArg::Strategy => GroupBy::Strategy,
                GroupArg::Threshold => GroupBy::Threshold,
            };
            let rows = match report(&input, group) {
                Ok(r) => r,
                Err(e) => return exit_for(&e),
            };
            let written = match &out {
                Some(path) => std::fs::File::create(path).and_then(|f| write_summary_csv(f, &rows)),
                None => write_summary_csv(std::io::stdout().lock(), &rows),
            };
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => exit_for(&Error::io(out.unwrap_or_else(|| "<stdout>".into()), e)),
            }
        }
        Command::Validate { config } => match load(&config).and_then(|ec| expand_grid(&ec)) {
            Ok(cells) => {
                for c in &cells {
                    println!("{}", c.config_id);
                }
                eprintln!("{} cells", cells.len());
                ExitCode::SUCCESS
            }
            Err(e) => exit_for(&e),
        },
        Command::StubServer { host, port, mode, fail_first } => {
            let mode = match mode {
                StubModeArg::Scripted => StubMode::Scripted,
                StubModeArg::Malformed => StubMode::Malformed { fail_first },
                StubModeArg::OutOfRange => StubMode::OutOfRange,
                StubModeArg::Throttled => StubMode::Throttled { fail_first },
            };
            match StubServer::start(&format!("{host}:{port}"), mode) {
                Ok(s) => {
                    println!("{}", s.base_url());
                    s.wait();
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
    }
}
