//! bpdc — train and interrogate sparse binary factor models.
//!
//! The model explains each datum as a scaled mixture of dictionary
//! atoms selected by a sparse binary code. Training alternates greedy
//! sparse coding, conjugate posterior updates for the factor
//! probabilities and per-datum scales, and ADAM steps on the mixture
//! network and dictionary, with factors pruned once their posterior
//! activation probability collapses.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error. Every run is a deterministic function of its configuration,
//! including the master seed.

use std::fmt;

mod commands;
mod config;

use config::{parse_args, ConfigError, RunConfig, KEYS};

/// Top-level error: usage problems exit 2, runtime failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<bpdc_core::Error> for CliError {
    fn from(e: bpdc_core::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Usage(m) | ConfigError::Value(m) => CliError::Usage(m),
            ConfigError::Io(m) => CliError::Failure(m),
        }
    }
}

const USAGE: &str = "\
usage: bpdc <command> [--config FILE] [--key value ...]

commands:
  train        fit a model to --data, writing metrics and checkpoints
  encode       sparse-code --data with a --checkpoint model
  reconstruct  write reconstructions and figure exports for --data
  sample       draw a synthetic dataset from the model
  inspect      print the factor posterior table of a --checkpoint
  gradcheck    compare backpropagated gradients to finite differences
  oracle       cross-check closed forms against independent numerics
  help         show this text and the configuration schema

Any schema key below is also a flag (--key value). Flags override the
--config file; --out and --iters abbreviate out_dir and n_iters. The
BPDC_THREADS environment variable caps worker threads.";

fn print_help() {
    println!("{USAGE}");
    println!("\nconfiguration keys (key = value per line in --config):");
    for (key, doc) in KEYS {
        println!("  {key:<18} {doc}");
    }
}

fn dispatch(sub: &str, cfg: &RunConfig) -> Result<(), CliError> {
    match sub {
        "train" => commands::cmd_train(cfg),
        "encode" => commands::cmd_encode(cfg),
        "reconstruct" => commands::cmd_reconstruct(cfg),
        "sample" => commands::cmd_sample(cfg),
        "inspect" => commands::cmd_inspect(cfg),
        "gradcheck" => commands::cmd_gradcheck(cfg),
        "oracle" => commands::cmd_oracle(cfg),
        other => Err(CliError::Usage(format!(
            "unknown command '{other}' (run 'bpdc help' for the list)"
        ))),
    }
}

fn run(args: &[String]) -> Result<(), CliError> {
    if args.is_empty() {
        print_help();
        return Err(CliError::Usage("missing subcommand".into()));
    }
    if args[0] == "help" || args[0] == "--help" || args[0] == "-h" {
        print_help();
        return Ok(());
    }
    let (sub, cfg) = parse_args(args)?;
    dispatch(&sub, &cfg)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run(&args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
