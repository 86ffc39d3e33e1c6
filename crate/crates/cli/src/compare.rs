//! The `compare` command: lines up the logs of several runs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use drowsyfed_core::csvfmt::fmt_f64;
use serde_json::Value;

use crate::run::{ROUNDS_CSV, SUMMARY_JSON};

pub const COMPARE_ROUNDS_CSV: &str = "compare_rounds.csv";
pub const COMPARE_SUMMARY_CSV: &str = "compare_summary.csv";

/// Final metrics of one run as read back from its logs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub strategy: String,
    pub operators: u64,
    pub local_epochs: u64,
    pub rounds: u64,
    pub test_accuracy: Option<f64>,
    pub test_precision: Option<f64>,
    pub test_recall: Option<f64>,
    pub untrained_accuracy: Option<f64>,
    /// Final test accuracy minus the first run's.
    pub delta_test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Per-round test accuracy, one column per run.
    pub rounds: Vec<(usize, Vec<Option<f64>>)>,
    pub runs: Vec<RunSummary>,
    /// Set when the runs had different lengths and were cut to the shortest.
    pub truncated_to: Option<usize>,
}

struct RunLog {
    rounds: Vec<(usize, Option<f64>)>,
    summary: RunSummary,
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        Ok(Some(s.parse()?))
    }
}

fn read_rounds(dir: &Path) -> Result<Vec<(usize, Option<f64>)>> {
    let path = dir.join(ROUNDS_CSV);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| anyhow!("{} is empty", path.display()))?
        .split(',')
        .collect();
    let col = header
        .iter()
        .position(|h| *h == "test_accuracy")
        .ok_or_else(|| anyhow!("{} has no test_accuracy column", path.display()))?;
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                bail!(
                    "{}:{}: expected {} columns",
                    path.display(),
                    i + 2,
                    header.len()
                );
            }
            Ok((cells[0].parse()?, parse_opt(cells[col])?))
        })
        .collect()
}

fn metric(v: &Value, split: &str, name: &str) -> Option<f64> {
    v.get("final")?.get(split)?.get(name)?.as_f64()
}

fn read_run(dir: &Path, label: String) -> Result<RunLog> {
    let path = dir.join(SUMMARY_JSON);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let v: Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))?;
    let num = |k: &str| v.get(k).and_then(Value::as_u64).unwrap_or(0);
    Ok(RunLog {
        rounds: read_rounds(dir)?,
        summary: RunSummary {
            label,
            strategy: v
                .get("strategy")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string(),
            operators: num("operators"),
            local_epochs: num("local_epochs"),
            rounds: num("rounds"),
            test_accuracy: metric(&v, "test", "accuracy"),
            test_precision: metric(&v, "test", "precision"),
            test_recall: metric(&v, "test", "recall"),
            untrained_accuracy: metric(&v, "untrained_test", "accuracy"),
            delta_test_accuracy: None,
        },
    })
}

fn labels(dirs: &[PathBuf]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(dirs.len());
    for d in dirs {
        let base = d
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| d.display().to_string());
        let mut label = base.clone();
        let mut k = 2;
        while out.contains(&label) {
            label = format!("{base}#{k}");
            k += 1;
        }
        out.push(label);
    }
    out
}

pub fn compare(dirs: &[PathBuf]) -> Result<Comparison> {
    if dirs.len() < 2 {
        bail!("compare needs at least two run directories");
    }
    let logs = dirs
        .iter()
        .zip(labels(dirs))
        .map(|(d, l)| read_run(d, l))
        .collect::<Result<Vec<_>>>()?;
    let lens: Vec<usize> = logs.iter().map(|l| l.rounds.len()).collect();
    let common = *lens.iter().min().unwrap_or(&0);
    let truncated_to = if lens.iter().any(|&n| n != common) {
        log::warn!("runs have {lens:?} rounds; comparing the first {common}");
        Some(common)
    } else {
        None
    };
    let rounds = (0..common)
        .map(|i| {
            let round = logs[0].rounds[i].0;
            (round, logs.iter().map(|l| l.rounds[i].1).collect())
        })
        .collect();
    let first = logs[0].summary.test_accuracy;
    let runs = logs
        .into_iter()
        .map(|l| {
            let mut s = l.summary;
            s.delta_test_accuracy = s.test_accuracy.zip(first).map(|(a, b)| a - b);
            s
        })
        .collect();
    Ok(Comparison {
        rounds,
        runs,
        truncated_to,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl Comparison {
    pub fn rounds_csv(&self) -> String {
        let mut s = String::from("round");
        for r in &self.runs {
            s.push_str(&format!(",{}", r.label));
        }
        s.push('\n');
        for (round, accs) in &self.rounds {
            s.push_str(&round.to_string());
            for a in accs {
                s.push(',');
                s.push_str(&cell(*a));
            }
            s.push('\n');
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "run,strategy,operators,local_epochs,rounds,final_test_accuracy,final_test_precision,final_test_recall,final_untrained_accuracy,delta_test_accuracy\n",
        );
        for r in &self.runs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.strategy,
                r.operators,
                r.local_epochs,
                r.rounds,
                cell(r.test_accuracy),
                cell(r.test_precision),
                cell(r.test_recall),
                cell(r.untrained_accuracy),
                cell(r.delta_test_accuracy)
            ));
        }
        s
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(COMPARE_ROUNDS_CSV), self.rounds_csv())?;
        std::fs::write(out.join(COMPARE_SUMMARY_CSV), self.summary_csv())?;
        Ok(())
    }
}
