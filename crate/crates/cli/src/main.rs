//! `kinemb`: simulate, pre-train, embed, estimate and sweep from TOML run
//! configs. Every command writes into one output directory together with a
//! `manifest.json` of SHA-256 hashes.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 config or usage
//! error.

mod bundle;
mod commands;
mod config;
mod error;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Common;

#[derive(Parser, Debug)]
#[command(name = "kinemb", version, about = "Graph descriptors and VAMP estimation for molecular kinetics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic trajectory (Markov chain, Langevin dynamics or a
    /// thermal Morse cluster).
    Simulate(Common),
    /// Denoising pre-training of a descriptor on the toy cluster corpus.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Start from the checkpoint already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Pooled descriptor embeddings of an XYZ trajectory as an FMB1 matrix.
    Embed(Common),
    /// Closed-form linear VAMP or a trained VAMP head on FMB1 features.
    Vamp(Common),
    /// Train one descriptor per grid value and record the losses.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads for grid points; 0 uses every core.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Pure and floored power-law fits to a records CSV.
    Fit(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => commands::simulate(c),
        Command::Pretrain { common, resume } => commands::pretrain(common, *resume),
        Command::Embed(c) => commands::embed(c),
        Command::Vamp(c) => commands::vamp(c),
        Command::Sweep { common, jobs } => commands::sweep(common, *jobs),
        Command::Fit(c) => commands::fit(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
