//! `gqsm` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gqsm", version, about = "Piloted GQSM detection: BER sweeps, complexity probes, decoder traces")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "GQSM_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed (overrides sweep.seed).
    #[arg(long, global = true, env = "GQSM_SEED")]
    seed: Option<u64>,
    /// Output file; stdout when absent. Written atomically.
    #[arg(long, global = true, env = "GQSM_OUT")]
    out: Option<PathBuf>,
    /// Worker threads [default: available cores].
    #[arg(long, global = true, env = "GQSM_WORKERS")]
    workers: Option<usize>,
    /// Override a config key, e.g. `--set system.p=2`. Repeatable.
    #[arg(long = "set", global = true, env = "GQSM_SET", value_delimiter = ';', value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo BER sweep, CSV output.
    Sweep(SweepArgs),
    /// Per-iteration decoder cost over a grid of system sizes, CSV output.
    Scaling(ScalingArgs),
    /// Decode one frame and print the mean belief entropy after each iteration.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `start:step:stop`, a comma list, or a single value (dB).
    #[arg(long, env = "GQSM_EBN0", allow_hyphen_values = true)]
    ebn0: Option<String>,
    /// Frame cap per point.
    #[arg(long, env = "GQSM_FRAMES")]
    frames: Option<u64>,
    /// Comma-separated subset of gabp, ml, mfb.
    #[arg(long, env = "GQSM_DECODERS", value_delimiter = ',')]
    decoders: Vec<String>,
    /// Early-stop threshold in bit errors; 0 disables.
    #[arg(long)]
    max_errors: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    /// `decoder:n_tx:n_rx:p`. Repeatable; default grid when absent.
    #[arg(long = "cell")]
    cells: Vec<String>,
    /// Timed repetitions per cell.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, allow_hyphen_values = true)]
    ebn0: Option<f64>,
    /// Frame index within the seeded stream.
    #[arg(long)]
    frame: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
