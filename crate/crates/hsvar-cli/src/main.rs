//! `hsvar` - batch estimation, simulation, bootstrap and risk analytics for
//! the hidden semi-Markov VAR model.

use clap::{Parser, Subcommand};
use hsvar_cli::commands::{self, CommandContext};
use hsvar_cli::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hsvar",
    version,
    about = "Hidden semi-Markov VAR: penalized EM estimation and dynamic multivariate risk measures"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the EM / simulation seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-thread hint (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides [output].directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true, default_value_t = false)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a single (K, lambda0) cell.
    Fit,
    /// Grid selection over K and lambda0 by ICL.
    Select,
    /// Simulate a bundled scenario.
    Simulate,
    /// Parametric bootstrap around a fitted model.
    Bootstrap,
    /// Per-time risk measures and Shapley attribution.
    Risk,
    /// MAP state labels only.
    Segment,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Select => "select",
            Command::Simulate => "simulate",
            Command::Bootstrap => "bootstrap",
            Command::Risk => "risk",
            Command::Segment => "segment",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        // Hint only; ignore failures (e.g. a pool already exists).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let Some(config_path) = &cli.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(2);
    };
    let config = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| config.output.directory.clone());
    let ctx = CommandContext {
        config,
        out_dir,
        force: cli.force,
        cli_seed: cli.seed,
    };

    let name = cli.command.name();
    match commands::run_command(name, &ctx) {
        Ok(manifest) => {
            if manifest.exit_code != 0 {
                eprintln!("warning: finished without convergence (partial results written)");
            }
            eprintln!("done: results in {}", ctx.out_dir.display());
            ExitCode::from(manifest.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let _ = commands::write_error_manifest(&ctx, name, &e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
