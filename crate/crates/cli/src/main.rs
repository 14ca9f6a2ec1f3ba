use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use monotone_track::app::{self, AppError, Overrides};
use monotone_track::Scheme;
use serde::Serialize;

/// Closed-loop simulation and verification of projected integral control.
#[derive(Debug, Parser)]
#[command(name = "monotone-track", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seed of the verification sampler.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = clap::value_parser!(Scheme))]
    scheme: Option<Scheme>,
    /// Time step `h`.
    #[arg(long, global = true)]
    step: Option<f64>,
    /// Horizon `T`.
    #[arg(long, global = true)]
    horizon: Option<f64>,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Scenario file (JSON).
    #[arg(value_name = "CONFIG", required_unless_present = "config")]
    path: Option<PathBuf>,
    #[arg(long, conflicts_with = "path")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn path(&self) -> PathBuf {
        self.config.clone().or_else(|| self.path.clone()).expect("clap enforces a config path")
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the closed loop and write the trajectory and a summary.
    Simulate(ConfigArg),
    /// Run the verification suite and write the report.
    Verify(ConfigArg),
    /// Steady state for a constant input.
    Steady {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true, required = true)]
        u: Vec<f64>,
    },
    /// Input in K whose steady output equals the reference.
    Feasible {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true, required = true)]
        r: Vec<f64>,
    },
    /// Run the sweep block of the scenario.
    Sweep(ConfigArg),
}

fn print_json<T: Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(text) => println!("{text}"),
        Err(e) => eprintln!("cannot serialize output: {e}"),
    }
}

fn finish<T: Serialize>(result: Result<T, AppError>) -> i32 {
    match result {
        Ok(value) => {
            print_json(&value);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let g = cli.global;
    let overrides = Overrides {
        out_dir: g.out_dir,
        seed: g.seed,
        scheme: g.scheme,
        step: g.step,
        horizon: g.horizon,
    };
    let code = match cli.command {
        Command::Simulate(c) => finish(app::run_simulate(&c.path(), &overrides)),
        Command::Verify(c) => match app::run_verify(&c.path(), &overrides) {
            Ok(report) => {
                println!("verification passed ({} checks)", report.records.len());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Steady { config, u } => finish(app::run_steady(&config.path(), &overrides, &u)),
        Command::Feasible { config, r } => finish(app::run_feasible(&config.path(), &overrides, &r)),
        Command::Sweep(c) => match app::run_sweep(&c.path(), &overrides) {
            Ok(summary) => {
                for row in &summary.rows {
                    println!("{} = {} -> exit {}", summary.parameter, row.value, row.exit_code);
                }
                println!("wrote {}", summary.csv.display());
                summary.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
