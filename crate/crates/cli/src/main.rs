use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use drowsyfed_cli::{compare, prep, run_config, PrepOptions};

/// Federated drowsiness-detection simulator.
#[derive(Parser)]
#[command(name = "drowsyfed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment(s) described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Threads used for operator training and evaluation.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory; defaults to `runs/<config name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Line up the logs of two or more runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Crop, augment and compute HoG descriptors for a directory of PGM frames.
    Prep {
        #[arg(long = "in")]
        input: PathBuf,
        /// HoG settings (TOML); built-in defaults when omitted.
        #[arg(long)]
        hog: Option<PathBuf>,
        /// Comma-separated list such as `flip,rotate:10,brightness:0.1`.
        #[arg(long, default_value = "")]
        augment: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            workers,
            out,
        } => {
            let out = out.unwrap_or_else(|| {
                PathBuf::from("runs").join(config.file_stem().unwrap_or_default())
            });
            for dir in run_config(&config, workers, &out)? {
                println!("wrote {}", dir.display());
            }
        }
        Command::Compare { dirs, out } => {
            let cmp = compare(&dirs)?;
            cmp.write(&out)?;
            if let Some(n) = cmp.truncated_to {
                eprintln!("warning: runs differ in length; compared the first {n} rounds");
            }
            print!("{}", cmp.summary_csv());
        }
        Command::Prep {
            input,
            hog,
            augment,
            out,
        } => {
            let report = prep(&PrepOptions {
                input,
                hog,
                augment,
                out,
            })?;
            println!(
                "{} frames processed, {} skipped, {} descriptors written",
                report.processed,
                report.skipped.len(),
                report.outputs
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
