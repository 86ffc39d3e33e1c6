use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BlockSpec, Layout, SstaConfig};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// All trainable weights, stored as one flat vector in canonical block order.
#[derive(Debug, Clone)]
pub struct SstaParams {
    config: SstaConfig,
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl PartialEq for SstaParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values
    }
}

impl SstaParams {
    /// Uniform `(-s, s)` with `s = sqrt(init_gain / fan_in)` for every weight
    /// block; bias blocks start at zero.
    pub fn init(config: &SstaConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut values = vec![0.0; layout.total];
        for block in &layout.blocks {
            if block.is_bias() {
                continue;
            }
            let s = (config.init_gain / block.fan_in as f64).sqrt();
            for v in &mut values[block.range.clone()] {
                *v = rng.uniform_range(-s, s);
            }
        }
        Ok(SstaParams {
            config: config.clone(),
            layout: Arc::new(layout),
            values,
        })
    }

    pub fn zeros(config: &SstaConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let values = vec![0.0; layout.total];
        Ok(SstaParams {
            config: config.clone(),
            layout: Arc::new(layout),
            values,
        })
    }

    /// Rebuilds parameters from a flat vector in canonical order.
    pub fn unflatten(config: &SstaConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if values.len() != layout.total {
            return Err(Error::Dimension(format!(
                "model needs {} parameters, got {}",
                layout.total,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        Ok(SstaParams {
            config: config.clone(),
            layout: Arc::new(layout),
            values,
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn config(&self) -> &SstaConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.layout.blocks
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| &self.values[b.range.clone()])
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Same shape, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "model needs {} parameters, got {}",
                self.values.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        Ok(SstaParams {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            values,
        })
    }

    /// Cheap content hash used to tie cached activations to the weights that
    /// produced them.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
            h ^= h >> 29;
        }
        h
    }

    /// Hex SHA-256 of the little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        checksum_of(&self.values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            config: self.config.clone(),
            values: self.values.clone(),
            sha256: self.checksum(),
        };
        let json = serde_json::to_string(&ckpt).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if checksum_of(&ckpt.values) != ckpt.sha256 {
            return Err(Error::Format(format!(
                "{}: checksum mismatch",
                path.display()
            )));
        }
        SstaParams::unflatten(&ckpt.config, ckpt.values)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    config: SstaConfig,
    values: Vec<f64>,
    sha256: String,
}

fn checksum_of(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_respects_fan_in_bounds() {
        let cfg = SstaConfig::default();
        let p = SstaParams::init(&cfg, &mut Rng::new(1)).unwrap();
        for b in p.blocks() {
            let s = (cfg.init_gain / b.fan_in as f64).sqrt();
            assert!(
                p.values()[b.range.clone()].iter().all(|v| v.abs() < s),
                "{}",
                b.name
            );
        }
    }

    #[test]
    fn flatten_round_trip() {
        let cfg = SstaConfig::toy();
        let p = SstaParams::init(&cfg, &mut Rng::new(2)).unwrap();
        let q = SstaParams::unflatten(&cfg, p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(SstaParams::unflatten(&cfg, vec![0.0; 3]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let p = SstaParams::init(&SstaConfig::toy(), &mut Rng::new(3)).unwrap();
        p.save(&path).unwrap();
        assert_eq!(SstaParams::load(&path).unwrap(), p);

        let text = std::fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["values"][0] = serde_json::json!(123.0);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(SstaParams::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn fingerprint_tracks_values() {
        let p = SstaParams::init(&SstaConfig::toy(), &mut Rng::new(4)).unwrap();
        let mut v = p.flatten();
        v[7] += 1e-12;
        let q = p.with_values(v).unwrap();
        assert_ne!(p.fingerprint(), q.fingerprint());
    }
}
