//! `mslddmm`: configuration-driven multiscale landmark registration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mslddmm::experiment::{
    cmd_check, cmd_export_fields, cmd_fit_kernel, cmd_register, ExperimentConfig,
};
use mslddmm::Error;

#[derive(Parser)]
#[command(
    name = "mslddmm",
    version,
    about = "Multiscale diffeomorphic landmark registration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the multiscale kernel and write the table and fit report.
    FitKernel(Common),
    /// Optimize the controls and write controls, history and summary.
    Register(Common),
    /// Export deformed grids, log-Jacobians and residual maps.
    ExportFields(Common),
    /// Run the invariant suite on a config.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Override a config field, e.g. `--set weight=2` or `--set base.0.target.n=40`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Json(_) | Error::Shape(_) | Error::InvalidLadder(_) => 2,
        Error::Threshold(_) => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> mslddmm::Result<String> {
    let (Command::FitKernel(c)
    | Command::Register(c)
    | Command::ExportFields(c)
    | Command::Check(c)) = &cli.command;
    let cfg = ExperimentConfig::load(&c.config, &c.overrides)?;
    let json = match cli.command {
        Command::FitKernel(_) => serde_json::to_string_pretty(&cmd_fit_kernel(&cfg)?),
        Command::Register(_) => serde_json::to_string_pretty(&cmd_register(&cfg)?),
        Command::ExportFields(_) => serde_json::to_string_pretty(&cmd_export_fields(&cfg)?),
        Command::Check(_) => serde_json::to_string_pretty(&cmd_check(&cfg)?),
    };
    Ok(json?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MSLDDMM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mslddmm: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
