use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tyee_core::config::Override;
use tyee_core::runner;

#[derive(Parser)]
#[command(name = "tyee", version, about = "Configuration-driven physiological signal experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dotted `key=value` override, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<Override>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Populate the preprocessing cache without training.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<Override>,
    },
    /// Compute metrics of a checkpoint on the configured splits.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<Override>,
    },
    /// Summarize a signal file, checkpoint or cache directory.
    Inspect { path: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("trace"))
        .format_timestamp_millis()
        .init();
    log::set_max_level(log::LevelFilter::Info);
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors, including malformed overrides, count as configuration errors
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Run {
            config,
            overrides,
            seed,
            resume,
        } => runner::cmd_run(&config, &overrides, seed, resume),
        Command::Preprocess { config, overrides } => runner::cmd_preprocess(&config, &overrides),
        Command::Evaluate {
            config,
            checkpoint,
            overrides,
        } => runner::cmd_evaluate(&config, &checkpoint, &overrides),
        Command::Inspect { path } => runner::cmd_inspect(&path),
    };
    ExitCode::from(code as u8)
}
