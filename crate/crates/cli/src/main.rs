//! `ebridge`: train, restore, verify, and sweep the energy-oriented
//! diffusion bridge at desk scale.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 numeric failure.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ebridge_core::Error;

use commands::{RestoreOverrides, SweepOverrides, TrainOverrides};
use config::SamplerKind;

#[derive(Parser)]
#[command(
    name = "ebridge",
    version,
    about = "Energy-oriented diffusion bridge toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a config file and write a checkpoint.
    Train {
        /// Run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Write the JSON-lines training log here instead of stdout.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long = "pretrain-steps")]
        pretrain_steps: Option<usize>,
    },
    /// Restore the evaluation set with a trained checkpoint.
    Restore {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output CSV with per-sample predictions and metrics.
        #[arg(long)]
        out: PathBuf,
        /// Function-evaluation budget per sample.
        #[arg(long)]
        nfe: Option<usize>,
        /// Restoration horizon.
        #[arg(long)]
        t0: Option<f64>,
        /// Sampler: consistency | ode.
        #[arg(long)]
        sampler: Option<SamplerKind>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the numerical proposition suite (no trained model required).
    Verify {
        /// Output JSON report path.
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Fault-injection hook: multiply the solver coefficient A by
        /// (1 + this value). Any nonzero setting must make the suite fail.
        #[arg(long = "perturb-coeffs", default_value_t = 0.0)]
        perturb_coeffs: f64,
        #[arg(long, default_value_t = 0xEB)]
        seed: u64,
    },
    /// Sweep the restoration horizon against the function-evaluation budget.
    #[command(name = "sweep-t0")]
    SweepT0 {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated horizons, e.g. "0.3,0.5,0.7,0.9".
        #[arg(long, value_parser = parse_f64_list)]
        grid: Option<Vec<f64>>,
        /// Comma-separated budgets, e.g. "1,5,10".
        #[arg(long = "nfe-list", value_parser = parse_usize_list)]
        nfe_list: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a paired dataset and dump it as CSV.
    #[command(name = "gen-data")]
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad float {p:?}: {e}"))
        })
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad integer {p:?}: {e}"))
        })
        .collect()
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Input(_) | Error::Domain(_) | Error::Json(_) | Error::Io(_) => 2,
        Error::Numeric(_) | Error::Training(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Train {
            config,
            out,
            log,
            seed,
            steps,
            pretrain_steps,
        } => commands::cmd_train(
            config,
            out,
            log.as_ref(),
            &TrainOverrides {
                seed: *seed,
                steps: *steps,
                pretrain_steps: *pretrain_steps,
            },
        )
        .map(|()| 0u8),
        Cmd::Restore {
            ckpt,
            config,
            out,
            nfe,
            t0,
            sampler,
            seed,
        } => commands::cmd_restore(
            ckpt,
            config,
            out,
            &RestoreOverrides {
                nfe: *nfe,
                t0: *t0,
                sampler: *sampler,
                seed: *seed,
            },
        )
        .map(|()| 0u8),
        Cmd::Verify {
            out,
            perturb_coeffs,
            seed,
        } => commands::cmd_verify(out, *perturb_coeffs, *seed).map(|all| if all { 0 } else { 1 }),
        Cmd::SweepT0 {
            ckpt,
            config,
            out,
            grid,
            nfe_list,
            seed,
        } => commands::cmd_sweep_t0(
            ckpt,
            config,
            out,
            &SweepOverrides {
                grid: grid.clone(),
                nfe_list: nfe_list.clone(),
                seed: *seed,
            },
        )
        .map(|()| 0u8),
        Cmd::GenData { config, out } => commands::cmd_gen_data(config, out).map(|()| 0u8),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
