use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use occlusight::workbench::commands::{
    cmd_analyze, cmd_build_operator, cmd_reconstruct, cmd_render, cmd_simulate, CommandError,
    SweepSpec,
};
use occlusight::workbench::config::load_config;

/// Occlusion-based non-line-of-sight imaging workbench.
#[derive(Parser)]
#[command(name = "occlusight", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output.directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config's acquisition.seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the forward operator and write the operator artifact.
    BuildOperator {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate photon counts for the configured scene and truth pattern.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct the hidden image from counts (simulating them if absent).
    Reconstruct {
        #[command(flatten)]
        common: Common,
    },
    /// Operator spectrum analysis, or a parameter sweep with --sweep.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Sweep axis followed by its sample values, e.g.
        /// `--sweep lambda 0 0.1 0.75 5`.
        #[arg(long, num_args = 2.., value_names = ["AXIS", "VALUES"])]
        sweep: Option<Vec<String>>,
    },
    /// Render the reconstructed reflectivity CSV as a PGM image.
    Render {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_sweep(raw: &[String]) -> Result<SweepSpec, CommandError> {
    let axis = raw[0].clone();
    let mut values = Vec::with_capacity(raw.len() - 1);
    for tok in &raw[1..] {
        // Accept both space-separated and comma-separated value lists.
        for piece in tok.split(',').filter(|p| !p.is_empty()) {
            values.push(piece.parse::<f64>().map_err(|e| {
                CommandError::Config(format!("bad sweep value {piece:?}: {e}"))
            })?);
        }
    }
    if values.is_empty() {
        return Err(CommandError::Config("sweep needs at least one value".into()));
    }
    Ok(SweepSpec { axis, values })
}

fn configure_threads() -> Result<(), CommandError> {
    if let Ok(raw) = std::env::var("OCCLUSIGHT_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| CommandError::Config(format!("OCCLUSIGHT_THREADS={raw:?} is not a number")))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CommandError::Config(e.to_string()))?;
        }
    }
    Ok(())
}

fn run() -> Result<(), CommandError> {
    configure_threads()?;
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::BuildOperator { common }
        | Command::Simulate { common }
        | Command::Reconstruct { common }
        | Command::Analyze { common, .. }
        | Command::Render { common } => common,
    };
    let cfg = load_config(&common.config)?;
    let out = common.out.as_deref();
    match &cli.command {
        Command::BuildOperator { .. } => cmd_build_operator(&cfg, out),
        Command::Simulate { common } => cmd_simulate(&cfg, out, common.seed),
        Command::Reconstruct { common } => cmd_reconstruct(&cfg, out, common.seed).map(|_| ()),
        Command::Analyze { common, sweep } => {
            let spec = match sweep {
                Some(raw) => Some(parse_sweep(raw)?),
                None => None,
            };
            cmd_analyze(&cfg, out, common.seed, spec.as_ref())
        }
        Command::Render { .. } => cmd_render(&cfg, out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("occlusight: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
