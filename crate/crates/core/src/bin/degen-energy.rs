//! Command-line front end; see `degen-energy --help`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use degen_energy::cli::{run, Command};

#[derive(Parser)]
#[command(
    version,
    about = "Lyapunov energies for 1-D degenerate parabolic equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build L on a grid and write it with a JSON sidecar.
    ConstructEnergy(Common),
    /// Evolve the initial condition and write the trajectory.
    Simulate(Common),
    /// Simulate and check the decay of the constructed energy.
    Verify(Common),
    /// Compare the numeric L with the model's closed form.
    CompareClosedForm(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Seed of the Monte-Carlo model validator.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::ConstructEnergy(a) => (Command::ConstructEnergy, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::CompareClosedForm(a) => (Command::CompareClosedForm, a),
    };
    let code = run(
        command,
        &args.config,
        args.out.as_deref(),
        args.workers,
        args.seed,
    );
    ExitCode::from(code as u8)
}
