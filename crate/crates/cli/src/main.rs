//! `hypstab kernels|simulate|verify --config PATH --out DIR [--print-config]`
//!
//! Exit codes: 0 ok, 2 configuration error, 3 non-convergence,
//! 4 verification failure, 5 I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "hypstab", version, about = "Backstepping boundary control of coupled hyperbolic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and dump the control (and observer) kernels.
    Kernels(Args),
    /// Simulate the plant under the configured controller.
    Simulate(Args),
    /// Run the verification suite; reuses kernel dumps found in the output directory.
    Verify(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `run.out` from the config, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (args, which) = match &cli.command {
        Command::Kernels(a) => (a, "kernels"),
        Command::Simulate(a) => (a, "simulate"),
        Command::Verify(a) => (a, "verify"),
    };
    let source = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Io(format!("{}: {e}", args.config.display())))?;
    let cfg = RunConfig::parse(&source).map_err(|e| Failure::Config(e.to_string()))?;
    let resolved = cfg.resolve(&source).map_err(|e| Failure::Config(e.to_string()))?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.run.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match which {
        "kernels" => commands::cmd_kernels(&cfg, &resolved, &out),
        "simulate" => commands::cmd_simulate(&cfg, &resolved, &out),
        _ => commands::cmd_verify(&resolved, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hypstab: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
