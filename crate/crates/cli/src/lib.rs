//! Command-line driver: simulation, depth reconstruction, flow fitting,
//! the phase-unwrapping toy, gradient checks and manifest replay.

pub mod commands;
pub mod error;
pub mod format;
pub mod image;
pub mod manifest;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "tofflow", version, about = "iToF depth, simulation and motion-compensation tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene into moving and static measurement stacks.
    Simulate(commands::simulate::SimulateArgs),
    /// Reconstruct wrapped depth from a measurement stack.
    Reconstruct(commands::reconstruct::ReconstructArgs),
    /// Fit per-timestep flows to a simulated capture.
    Optimize(commands::optimize::OptimizeArgs),
    /// Recover m3 from the other samples and a depth label.
    Toy(commands::toy::ToyArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Re-run a command from its manifest and compare the outputs.
    Replay(commands::replay::ReplayArgs),
    /// Write one frame of a raster file as PFM.
    ExportPfm(commands::export::ExportArgs),
}

/// Parses `args` (without the program name) and runs the command.
///
/// Returns the manifest the command wrote, or `None` for help and
/// version output.
pub fn run(args: Vec<String>) -> CliResult<Option<RunManifest>> {
    let cli = match Cli::try_parse_from(std::iter::once("tofflow".to_string()).chain(args.clone())) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    Ok(None)
                }
                _ => Err(CliError::Input(e.to_string())),
            };
        }
    };
    let manifest = match &cli.command {
        Command::Simulate(a) => commands::simulate::run(a, &args)?,
        Command::Reconstruct(a) => commands::reconstruct::run(a, &args)?,
        Command::Optimize(a) => commands::optimize::run(a, &args)?,
        Command::Toy(a) => commands::toy::run(a, &args)?,
        Command::Gradcheck(a) => commands::gradcheck::run(a, &args)?,
        Command::Replay(a) => commands::replay::run(a)?,
        Command::ExportPfm(a) => commands::export::run(a, &args)?,
    };
    Ok(Some(manifest))
}
