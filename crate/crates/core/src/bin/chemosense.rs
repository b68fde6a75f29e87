use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chemosense::batch::{check_csv, run_batch, BatchOptions};
use chemosense::scenario::{parse_config, preset, PRESETS};

#[derive(Parser)]
#[command(
    name = "chemosense",
    version,
    about = "Chemotaxis simulations with structure-preserving diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario in a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        parallel: usize,
        /// Treat blow-up outside a comparison group as a failure.
        #[arg(long)]
        strict: bool,
    },
    /// List or print presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Re-verify the inequalities stored in a trajectory CSV.
    Check { csv: PathBuf },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Show { name: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> chemosense::Result<bool> {
    match cmd {
        Command::Run {
            config,
            out,
            parallel,
            strict,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let batch = parse_config(&text)?;
            let report = run_batch(&batch, &BatchOptions { out, parallel, strict })?;
            print!("{}", report.summary());
            Ok(report.passed())
        }
        Command::Preset {
            action: PresetAction::List,
        } => {
            for (name, about) in PRESETS {
                println!("{name:<16} {about}");
            }
            Ok(true)
        }
        Command::Preset {
            action: PresetAction::Show { name },
        } => {
            let scenarios = preset(&name)?;
            let text: Vec<String> = scenarios.iter().map(|s| s.to_config()).collect();
            print!("{}", text.join("\n"));
            Ok(true)
        }
        Command::Check { csv } => {
            let verdicts = check_csv(&csv)?;
            for v in &verdicts {
                println!("{v}");
            }
            Ok(verdicts.iter().all(|v| v.passed))
        }
    }
}
