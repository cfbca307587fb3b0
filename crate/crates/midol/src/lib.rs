//! Command-line front end: config ingestion, seeding, run-directory
//! management, and the five subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod gradsuite;
pub mod rundir;

use clap::{Args, Parser, Subcommand};
use config::{resolve_config, ConfigOverrides};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "midol",
    version,
    about = "Sinkhorn-balanced MoE contrastive training on synthetic multimodal data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Flat key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Step-count override.
    #[arg(long)]
    steps: Option<usize>,
    /// Root directory for run artifacts.
    #[arg(long, env = "MIDOL_OUT", default_value = "runs")]
    out: PathBuf,
    /// Disable the MoE projector (single shared head baseline).
    #[arg(long)]
    no_moe: bool,
    /// Disable the routing-consistency loss.
    #[arg(long)]
    no_route: bool,
    /// Disable the intra-modality contrastive loss.
    #[arg(long)]
    no_cst: bool,
    /// Write routing decisions over the evaluation set as CSV.
    #[arg(long)]
    dump_routing: Option<PathBuf>,
    /// Write the evaluation dataset (features + hidden labels) as CSV.
    #[arg(long)]
    dump_data: Option<PathBuf>,
}

impl CommonOpts {
    fn resolve(&self) -> anyhow::Result<midol_core::trainer::TrainConfig> {
        resolve_config(
            self.config.as_deref(),
            &ConfigOverrides {
                seed: self.seed,
                steps: self.steps,
                no_moe: self.no_moe,
                no_route: self.no_route,
                no_cst: self.no_cst,
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the exact information-decomposition identities.
    VerifyIdentities {
        /// Number of seeded random tables.
        #[arg(long, default_value_t = 1000)]
        tables: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check all gradients against central finite differences.
    Gradcheck {
        /// Minimum perturbed coordinates per operation.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run training and persist metrics, checkpoint, and exports.
    Train {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Load a checkpoint and report routing and probe metrics.
    Evaluate {
        /// Checkpoint file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the four ablation flag combinations with a shared seed.
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::VerifyIdentities { tables, seed } => commands::cmd_verify_identities(tables, seed),
        Command::Gradcheck { points, seed } => commands::cmd_gradcheck(points, seed),
        Command::Train { common } => {
            let config = common.resolve()?;
            commands::cmd_train(
                &config,
                &common.out,
                common.dump_routing.as_deref(),
                common.dump_data.as_deref(),
            )
        }
        Command::Evaluate { checkpoint, common } => {
            let config = common.resolve()?;
            commands::cmd_evaluate(
                &config,
                &checkpoint,
                &common.out,
                common.dump_routing.as_deref(),
                common.dump_data.as_deref(),
            )
        }
        Command::Ablate { common } => {
            let config = common.resolve()?;
            commands::cmd_ablate(&config, &common.out)
        }
    }
}

/// Entry point; returns the process exit code (0 only when the invoked
/// suite passed; 2 for usage errors).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap uses exit code 2 for usage errors and 0 for --help/--version.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
