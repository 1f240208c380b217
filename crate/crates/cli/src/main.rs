use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pid_cli::commands::{self, GeneratedKind, InferArgs};
use pid_cli::{CliError, Outcome};
use pid_core::InferenceMode;

/// Inference and decision analysis on potential influence diagrams.
#[derive(Debug, Parser)]
#[command(name = "pidiag", version)]
struct Cli {
    /// Report style.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Pid,
    Cid,
}

impl From<Mode> for InferenceMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Pid => InferenceMode::Pid,
            Mode::Cid => InferenceMode::Cid,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Cid,
    Pid,
    Decision,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the regularity conditions.
    Validate { file: PathBuf },
    /// Posterior marginals of query nodes given evidence.
    Infer {
        file: PathBuf,
        /// Observation as name=state; repeatable.
        #[arg(long, short)]
        evidence: Vec<String>,
        /// Query node; repeatable. Defaults to every unobserved chance node.
        #[arg(long, short)]
        query: Vec<String>,
        #[arg(long, value_enum, default_value_t = Mode::Pid)]
        mode: Mode,
        /// Comma-separated elimination order.
        #[arg(long, value_delimiter = ',')]
        order: Vec<String>,
        /// Also compute the answer by enumeration and report the deviation.
        #[arg(long)]
        verify: bool,
    },
    /// Optimal policy and maximum expected utility.
    Solve {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Pid)]
        mode: Mode,
        /// Also solve by exhaustive policy search and compare.
        #[arg(long)]
        verify: bool,
    },
    /// Convert to a conditional influence diagram.
    ToCid {
        file: PathBuf,
        /// Comma-separated target order of the unobserved chance nodes.
        #[arg(long, value_delimiter = ',')]
        order: Vec<String>,
        /// Conditionalize every potential before propagating.
        #[arg(long)]
        eager: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// d-separation of two node sets given a third.
    Dsep {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        j: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        given: Vec<String>,
    },
    /// Remove one unobserved chance node by probabilistic reduction.
    Reduce {
        file: PathBuf,
        #[arg(long)]
        node: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a built-in example diagram.
    Example {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(commands::EXAMPLES))]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a random diagram.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Kind::Cid)]
        kind: Kind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: &Cli, echo: &[String]) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Validate { file } => commands::validate(echo, file),
        Command::Infer { file, evidence, query, mode, order, verify } => {
            let args = InferArgs {
                file: file.clone(),
                evidence: evidence.clone(),
                query: query.clone(),
                mode: (*mode).into(),
                order: order.clone(),
                verify: *verify,
            };
            commands::infer(echo, &args)
        }
        Command::Solve { file, mode, verify } => commands::solve(echo, file, (*mode).into(), *verify),
        Command::ToCid { file, order, eager, out } => commands::to_cid(echo, file, order, *eager, out.as_deref()),
        Command::Dsep { file, j, k, given } => commands::dsep(echo, file, j, k, given),
        Command::Reduce { file, node, out } => commands::reduce(echo, file, node, out.as_deref()),
        Command::Example { name, out } => commands::example(echo, name, out.as_deref()),
        Command::Generate { seed, kind, out } => {
            let kind = match kind {
                Kind::Cid => GeneratedKind::Cid,
                Kind::Pid => GeneratedKind::Pid,
                Kind::Decision => GeneratedKind::Decision,
            };
            commands::generate(echo, *seed, kind, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let echo: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(&cli, &echo) {
        Ok(outcome) => {
            match cli.format {
                Format::Text => print!("{}", outcome.text),
                Format::Structured => {
                    println!("{}", serde_json::to_string_pretty(&outcome.report).expect("reports serialize"))
                }
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            match cli.format {
                Format::Text => eprintln!("error: {e}"),
                Format::Structured => {
                    let body = serde_json::json!({ "command": echo, "error": e.to_string(), "exit_code": e.exit_code() });
                    println!("{}", serde_json::to_string_pretty(&body).expect("serializable"));
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
