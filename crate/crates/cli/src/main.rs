use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use unlearn_cli::config::RunConfig;
use unlearn_cli::error::CliResult;
use unlearn_cli::run;

/// Boundary-based unlearning experiments: train a classifier, unlearn a
/// forget set, compare baselines, sweep grids, verify the math.
///
/// Exit codes: 0 success, 2 configuration error, 3 numeric failure,
/// 4 empty/invalid selection.
#[derive(Parser)]
#[command(name = "unlearn", version)]
struct Cli {
    /// Worker threads for parallel work (grid cells, boundary searches).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the base model and save a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Boundary-search the forget set and fine-tune on the relabels.
    Unlearn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the reference unlearning methods on the same forget set.
    Baselines {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unlearn across a fraction / gamma / lambda grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Base checkpoint; trained from the config when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the numerical verification suite.
    Verify {
        /// Optional config (only its seed matters here).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        // Best effort: tests may initialize the pool more than once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match cli.cmd {
        Cmd::Train { config, out } => {
            let cfg = run::load_config(&config, cli.seed)?;
            run::cmd_train(&cfg, &out)
        }
        Cmd::Unlearn {
            config,
            checkpoint,
            out,
        } => {
            let cfg = run::load_config(&config, cli.seed)?;
            run::cmd_unlearn(&cfg, &checkpoint, &out)
        }
        Cmd::Baselines {
            config,
            checkpoint,
            out,
        } => {
            let cfg = run::load_config(&config, cli.seed)?;
            run::cmd_baselines(&cfg, &checkpoint, &out)
        }
        Cmd::Sweep {
            config,
            checkpoint,
            out,
        } => {
            let cfg = run::load_config(&config, cli.seed)?;
            run::cmd_sweep(&cfg, checkpoint.as_deref(), &out)
        }
        Cmd::Verify { config, out } => {
            let cfg = match config {
                Some(path) => run::load_config(&path, cli.seed)?,
                None => {
                    let mut cfg = RunConfig::default();
                    if let Some(seed) = cli.seed {
                        cfg.seed = seed;
                    }
                    cfg
                }
            };
            run::cmd_verify(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
