//! `satlab`: train, attack, and probe small adversarially-trained networks.
//!
//! Every subcommand prints exactly one JSON summary line on stdout; progress
//! and reports go to stderr. Exit codes: 0 success, 1 verification failure,
//! 2 usage/config error, 3 runtime failure.

use clap::{Args, Parser, Subcommand};
use sat_lab::commands;
use sat_lab::{LabError, EXIT_OK, EXIT_VERIFICATION_FAILED};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "satlab",
    about = "Smooth adversarial training laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Name of a shipped preset configuration.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory for checkpoints and CSVs.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config's training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CkptArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Adversarially train a model and write checkpoint + metrics.
    Train(ConfigArgs),
    /// Measure clean and robust accuracy of a checkpoint.
    Attack(CkptArgs),
    /// Robustness sweeps over attack iterations and perturbation budgets.
    Eval(CkptArgs),
    /// Sample the 2-D adversarial loss landscape around one sample.
    Landscape(CkptArgs),
    /// Train the four backward-substitution cells and tabulate them.
    Ablation(ConfigArgs),
    /// Verify analytic derivatives against finite differences.
    Gradcheck {
        /// Deliberately perturb one derivative (failure-path test hook).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// List shipped preset names.
    Presets,
}

fn run(cli: Cli) -> Result<(serde_json::Value, i32), LabError> {
    match cli.command {
        Command::Train(args) => {
            let loaded = commands::resolve_config(
                args.config.as_deref(),
                args.preset.as_deref(),
                args.seed,
            )?;
            Ok((commands::cmd_train(&loaded, &args.out)?, EXIT_OK))
        }
        Command::Attack(args) => {
            let loaded = commands::resolve_config(
                args.config.config.as_deref(),
                args.config.preset.as_deref(),
                args.config.seed,
            )?;
            Ok((
                commands::cmd_attack(&loaded, &args.ckpt, &args.config.out)?,
                EXIT_OK,
            ))
        }
        Command::Eval(args) => {
            let loaded = commands::resolve_config(
                args.config.config.as_deref(),
                args.config.preset.as_deref(),
                args.config.seed,
            )?;
            Ok((
                commands::cmd_eval(&loaded, &args.ckpt, &args.config.out)?,
                EXIT_OK,
            ))
        }
        Command::Landscape(args) => {
            let loaded = commands::resolve_config(
                args.config.config.as_deref(),
                args.config.preset.as_deref(),
                args.config.seed,
            )?;
            Ok((
                commands::cmd_landscape(&loaded, &args.ckpt, &args.config.out)?,
                EXIT_OK,
            ))
        }
        Command::Ablation(args) => {
            let loaded = commands::resolve_config(
                args.config.as_deref(),
                args.preset.as_deref(),
                args.seed,
            )?;
            Ok((commands::cmd_ablation(&loaded, &args.out)?, EXIT_OK))
        }
        Command::Gradcheck { inject_fault } => {
            let (summary, passed) = commands::cmd_gradcheck(inject_fault);
            let code = if passed {
                EXIT_OK
            } else {
                EXIT_VERIFICATION_FAILED
            };
            Ok((summary, code))
        }
        Command::Presets => Ok((
            serde_json::json!({
                "command": "presets",
                "presets": sat_lab::config::preset_names(),
            }),
            EXIT_OK,
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((summary, code)) => {
            println!("{summary}");
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
