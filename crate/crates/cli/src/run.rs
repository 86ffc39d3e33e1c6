//! The `run` command: executes every experiment in a config file and writes
//! its logs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use drowsyfed_core::csvfmt::fmt_f64;
use drowsyfed_core::experiment::{
    report_csv_row, rounds_csv_header, rounds_csv_row, run_experiment, ExperimentConfig, Summary,
    REPORT_CSV_HEADER,
};

use crate::config::{echo, load_config};

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_CSV: &str = "report.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const CONFIG_ECHO: &str = "config.toml";

/// Runs the config at `path`, writing into `out` (one subdirectory per sweep
/// point). Returns the directories written.
pub fn run_config(path: &Path, workers: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let runs = load_config(path)?;
    let mut dirs = Vec::with_capacity(runs.len());
    for run in runs {
        let dir = match &run.label {
            Some(label) => out.join(label),
            None => out.to_path_buf(),
        };
        log::info!("running {} into {}", path.display(), dir.display());
        run_one(&run.config, workers, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Runs one experiment. Each `rounds.csv` row is flushed as soon as its round
/// completes, so a failed run still leaves the rounds that finished.
pub fn run_one(cfg: &ExperimentConfig, workers: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    std::fs::write(dir.join(CONFIG_ECHO), echo(cfg)?)?;

    let mut rounds = BufWriter::new(File::create(dir.join(ROUNDS_CSV))?);
    writeln!(rounds, "{}", rounds_csv_header(cfg.scenario.operators))?;
    rounds.flush()?;
    let mut timing = BufWriter::new(File::create(dir.join(TIMING_CSV))?);
    writeln!(timing, "round,seconds")?;

    let result = run_experiment(cfg, workers, |r| {
        writeln!(rounds, "{}", rounds_csv_row(r))?;
        rounds.flush()?;
        writeln!(timing, "{},{}", r.round, fmt_f64(r.wall_time))?;
        timing.flush()?;
        Ok(())
    });
    let outcome = result.with_context(|| format!("experiment in {} failed", dir.display()))?;

    let summary = Summary::new(cfg, &outcome);
    std::fs::write(
        dir.join(SUMMARY_JSON),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    let mut report = BufWriter::new(File::create(dir.join(REPORT_CSV))?);
    writeln!(report, "{REPORT_CSV_HEADER}")?;
    for p in &outcome.participants {
        writeln!(report, "{}", report_csv_row(p))?;
    }
    report.flush()?;
    Ok(())
}
