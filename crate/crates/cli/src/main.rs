//! `cadenza`: one binary covering the corpus pipeline (tokenize,
//! build-vocab, filter, roundtrip-check), model runs (train, generate),
//! and reporting (eval, analyze-mi).
//!
//! Every subcommand echoes its resolved options, one `resolved name =
//! value (source)` line each, before doing any work; `--dump-config`
//! stops right after that echo. Failures print exactly one
//! `cadenza: <kind>: <reason>` line on stderr and exit with 1 for usage
//! errors, 2 for data errors, and 3 for runtime failures.

mod data;
mod report;
mod run;

use std::fmt;
use std::process::exit;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

/// A command failure carrying its exit class.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration values (exit 1).
    Usage(String),
    /// Missing or malformed input data (exit 2).
    Data(String),
    /// Errors while running the job or writing results (exit 3).
    Runtime(String),
}

pub type CmdResult = Result<(), Failure>;

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Failure {
        Failure::Usage(msg.to_string())
    }

    pub fn data(msg: impl fmt::Display) -> Failure {
        Failure::Data(msg.to_string())
    }

    pub fn runtime(msg: impl fmt::Display) -> Failure {
        Failure::Runtime(msg.to_string())
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data(_) => "data",
            Failure::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Runtime(m) => m,
        }
    }

    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

/// Print one `resolved name = value (source)` line.
pub fn echo(name: &str, value: impl fmt::Display, source: &str) {
    println!("resolved {name} = {value} ({source})");
}

/// Collapse a possibly multi-line message into a single line.
fn one_line(msg: &str) -> String {
    msg.split(['\n', '\r'])
        .map(str::trim)
        .filter(|part| !part.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}

/// First line of a clap error, without its `error: ` prefix.
fn clap_reason(err: &clap::Error) -> String {
    let text = err.to_string();
    let first = text.lines().next().unwrap_or("invalid arguments");
    first.strip_prefix("error: ").unwrap_or(first).to_string()
}

#[derive(Parser)]
#[command(
    name = "cadenza",
    version,
    about = "Symbolic-music lab: corpus tools, training, generation, evaluation"
)]
struct Cli {
    /// Echo the resolved configuration, then exit without running.
    #[arg(long, global = true)]
    dump_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a directory of MIDI files into token sequences.
    Tokenize(data::TokenizeArgs),
    /// Write the built-in attribute vocabulary as JSON.
    BuildVocab(data::BuildVocabArgs),
    /// Copy the MIDI files that survive corpus filtering.
    Filter(data::FilterArgs),
    /// Train a model on a tokenized corpus.
    Train(run::TrainArgs),
    /// Generate MIDI pieces from a checkpoint.
    Generate(run::GenerateArgs),
    /// Quality and control metrics over generated MIDI.
    Eval(report::EvalArgs),
    /// Mutual-information analysis of a tokenized corpus.
    AnalyzeMi(report::AnalyzeMiArgs),
    /// Verify the tokenizer round trip over a MIDI corpus.
    RoundtripCheck(data::RoundtripArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => match err.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                print!("{err}");
                exit(0);
            }
            _ => fail(&Failure::Usage(clap_reason(&err))),
        },
    };
    let dump_only = cli.dump_config;
    let result = match cli.command {
        Command::Tokenize(args) => data::tokenize(&args, dump_only),
        Command::BuildVocab(args) => data::build_vocab(&args, dump_only),
        Command::Filter(args) => data::filter(&args, dump_only),
        Command::Train(args) => run::train(&args, dump_only),
        Command::Generate(args) => run::generate(&args, dump_only),
        Command::Eval(args) => report::eval(&args, dump_only),
        Command::AnalyzeMi(args) => report::analyze_mi(&args, dump_only),
        Command::RoundtripCheck(args) => data::roundtrip_check(&args, dump_only),
    };
    if let Err(failure) = result {
        fail(&failure);
    }
}

fn fail(failure: &Failure) -> ! {
    eprintln!("cadenza: {}: {}", failure.kind(), one_line(failure.message()));
    exit(failure.code());
}
