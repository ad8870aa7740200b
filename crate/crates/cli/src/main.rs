use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kfp_lab::{cmd_distance, cmd_flow, cmd_grid_study, cmd_verify, CliError, ExperimentConfig, Outcome};

/// Kolmogorov-Fokker-Planck flows, weighted transport distances and the
/// inequality reports built on them.
#[derive(Parser)]
#[command(name = "kfp-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the initial density and write the trace.
    Flow(Args),
    /// Solve for the distance between the configured pair.
    Distance(Args),
    /// Run the selected inequality checks.
    Verify(Args),
    /// Tabulate flow quantities over grid refinements.
    GridStudy(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML experiment file.
    config: PathBuf,
    /// Overrides of the form section.key=value.
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let (args, f): (&Args, fn(&ExperimentConfig) -> Result<Outcome, CliError>) = match &cli.command {
        Command::Flow(a) => (a, cmd_flow),
        Command::Distance(a) => (a, cmd_distance),
        Command::Verify(a) => (a, cmd_verify),
        Command::GridStudy(a) => (a, cmd_grid_study),
    };
    let cfg = ExperimentConfig::load(&args.config, &args.overrides)?.with_env_output();
    f(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { kfp_lab::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match run(cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("kfp-lab: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
