//! Experiment config files: TOML with strict keys and an optional one-axis sweep.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use drowsyfed_core::experiment::ExperimentConfig;
use drowsyfed_core::fl::{AggregationStrategy, TrainConfig};
use drowsyfed_core::metrics::Averaging;
use drowsyfed_core::model::SstaConfig;
use drowsyfed_core::synth::Scenario;
use drowsyfed_core::Error;
use serde::{Deserialize, Serialize};

/// Re-runs the experiment once per value of a single dotted config key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    /// Dotted key such as `scenario.operators`.
    pub parameter: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    seed: u64,
    rounds: usize,
    averaging: Averaging,
    model: SstaConfig,
    scenario: Scenario,
    strategy: AggregationStrategy,
    train: TrainConfig,
    sweep: Option<Sweep>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        ConfigFile {
            seed: d.seed,
            rounds: d.rounds,
            averaging: d.averaging,
            model: d.model,
            scenario: d.scenario,
            strategy: d.strategy,
            train: d.train,
            sweep: None,
        }
    }
}

impl ConfigFile {
    fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            rounds: self.rounds,
            averaging: self.averaging,
            model: self.model.clone(),
            scenario: self.scenario.clone(),
            strategy: self.strategy.clone(),
            train: self.train.clone(),
        }
    }
}

/// One concrete experiment from a config file. `label` names the sweep
/// point (`operators-10`) and is `None` for a file without a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigRun {
    pub label: Option<String>,
    pub config: ExperimentConfig,
}

pub fn load_config(path: &Path) -> Result<Vec<ConfigRun>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config(&text, &path.display().to_string())
}

/// Parses and validates config text; `origin` prefixes error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<Vec<ConfigRun>> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let at = e
            .span()
            .map(|s| format!(":{}", line_of_offset(text, s.start)))
            .unwrap_or_default();
        anyhow!("{origin}{at}: {}", e.message())
    })?;
    let base = file.experiment();
    let Some(sweep) = &file.sweep else {
        validate(&base, text, origin)?;
        return Ok(vec![ConfigRun {
            label: None,
            config: base,
        }]);
    };
    let sweep_line = find_key_line(text, "sweep.parameter")
        .map(|l| format!(":{l}"))
        .unwrap_or_default();
    if sweep.values.is_empty() {
        bail!("{origin}{sweep_line}: sweep needs at least one value");
    }
    let base_value = toml::Value::try_from(&base)?;
    let mut runs = Vec::with_capacity(sweep.values.len());
    for v in &sweep.values {
        let mut value = base_value.clone();
        set_dotted(&mut value, &sweep.parameter, v.clone())
            .map_err(|m| anyhow!("{origin}{sweep_line}: {m}"))?;
        let config: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| {
            anyhow!(
                "{origin}{sweep_line}: sweep value {v} for `{}`: {}",
                sweep.parameter,
                e.message()
            )
        })?;
        validate(&config, text, origin)
            .with_context(|| format!("sweep point {} = {v}", sweep.parameter))?;
        let leaf = sweep
            .parameter
            .rsplit('.')
            .next()
            .unwrap_or(&sweep.parameter);
        runs.push(ConfigRun {
            label: Some(format!("{leaf}-{}", value_label(v))),
            config,
        });
    }
    Ok(runs)
}

fn validate(cfg: &ExperimentConfig, text: &str, origin: &str) -> Result<()> {
    match cfg.validate() {
        Ok(()) => Ok(()),
        Err(Error::Config { key, message }) => {
            let at = find_key_line(text, &key)
                .map(|l| format!(":{l}"))
                .unwrap_or_default();
            Err(anyhow!("{origin}{at}: `{key}` {message}"))
        }
        Err(e) => Err(anyhow!("{origin}: {e}")),
    }
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn set_dotted(
    root: &mut toml::Value,
    key: &str,
    v: toml::Value,
) -> std::result::Result<(), String> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().ok_or("empty sweep parameter")?;
    let mut cur = root;
    for p in &parts {
        cur = cur
            .get_mut(*p)
            .ok_or_else(|| format!("unknown sweep parameter `{key}`"))?;
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| format!("`{key}` does not name a config field"))?;
    if !table.contains_key(last) {
        return Err(format!("unknown sweep parameter `{key}`"));
    }
    table.insert(last.to_string(), v);
    Ok(())
}

/// 1-based line containing byte `offset`.
fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line where a dotted key such as `train.learning_rate` is assigned, either
/// under its `[train]` header or as a dotted key at top level.
pub fn find_key_line(text: &str, dotted: &str) -> Option<usize> {
    let (section, leaf) = match dotted.rsplit_once('.') {
        Some((s, l)) => (s, l),
        None => ("", dotted),
    };
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            current = line
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
            continue;
        }
        let Some((k, _)) = line.split_once('=') else {
            continue;
        };
        let k = k.trim().trim_matches('"');
        let full = if current.is_empty() {
            k.to_string()
        } else {
            format!("{current}.{k}")
        };
        if full == dotted || (current == section && k == leaf) {
            return Some(i + 1);
        }
    }
    None
}

/// Resolved config written next to every run's logs.
pub fn echo(cfg: &ExperimentConfig) -> Result<String> {
    Ok(toml::to_string(cfg)?)
}
