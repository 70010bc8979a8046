//! `ahd`: build codes, sweep contexts, benchmark kernels, run kernel
//! evolution and summarize its logs.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ahd_services::ServiceError> for CliError {
    fn from(e: ahd_services::ServiceError) -> Self {
        match e {
            ahd_services::ServiceError::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ahd", version, about = "LDPC check-node kernel experiments")]
pub struct Cli {
    /// Global seed; overrides the config file.
    #[arg(long, global = true, env = "AHD_SEED")]
    pub seed: Option<u64>,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CodeArgs {
    /// Code file in `qcldpc` text form; overrides the config.
    #[arg(long)]
    pub code: Option<PathBuf>,
    /// Lifting size of the default code; overrides the config.
    #[arg(long)]
    pub lift: Option<usize>,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Registers a script kernel as `script:<ID>`; repeatable.
    #[arg(long = "script", value_name = "ID=PATH")]
    pub scripts: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Local,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    /// Start missing services in-process and run the samplers.
    Orchestrator,
    /// Serve only the database.
    Db,
    /// Serve only an evaluator.
    Evaluator,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the code in text form and print its dimensions.
    Codegen {
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Success, iterations and BER over a context grid.
    Sweep {
        #[command(flatten)]
        code: CodeArgs,
        #[command(flatten)]
        kernels: KernelArgs,
        /// `n_prb,mcs_index,snr_db` CSV; the built-in 6×5 grid when absent.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value = "boxplus")]
        kernel: String,
        #[arg(long, default_value_t = 200)]
        tbs: usize,
    },
    /// Mean and spread of decoding results per kernel.
    Bench {
        #[command(flatten)]
        code: CodeArgs,
        #[command(flatten)]
        kernels: KernelArgs,
        /// Comma-separated kernel names.
        #[arg(long = "kernels", value_delimiter = ',', default_value = "boxplus,min-sum,offset-min-sum,boxplus-phi,discovered")]
        kernel_names: Vec<String>,
        /// `n_prb,mcs_index,snr_db`; the protocol's first context when absent.
        #[arg(long)]
        context: Option<String>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 30)]
        tbs: usize,
    },
    /// Run kernel evolution.
    Evolve {
        #[arg(long, value_enum, default_value = "local")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "orchestrator")]
        role: Role,
        /// Candidate budget; overrides the config.
        #[arg(long)]
        budget: Option<u64>,
        /// Continue from the event log in the output directory.
        #[arg(long)]
        resume: bool,
        /// Listen address for `--role db|evaluator`.
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: String,
    },
    /// Totals, best program and CSV tables from an event log.
    Report {
        /// Event log; `<out-dir>/events.jsonl` when absent.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
