use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network dimensions.
///
/// Each frame passes through `ssa_stages` repetitions of
/// Conv2D → SSA → FC. The first stage sees the frame itself; later stages
/// see the previous FC output laid out on the most square grid that holds
/// `fc_dim` values (16 → 4×4, 12 → 3×4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SstaConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    pub conv_channels: usize,
    pub kernel_size: usize,
    pub attention_dim: usize,
    pub fc_dim: usize,
    pub ssa_stages: usize,
    /// Frames per sample (`l + 1`).
    pub sequence_length: usize,
    pub conv1d_channels: usize,
    pub conv1d_kernel: usize,
    pub lstm_hidden: usize,
    pub classes: usize,
    /// Weights start uniform in `±sqrt(init_gain / fan_in)`.
    pub init_gain: f64,
}

impl Default for SstaConfig {
    fn default() -> Self {
        SstaConfig {
            frame_height: 16,
            frame_width: 16,
            conv_channels: 4,
            kernel_size: 3,
            attention_dim: 8,
            fc_dim: 16,
            ssa_stages: 2,
            sequence_length: 5,
            conv1d_channels: 8,
            conv1d_kernel: 3,
            lstm_hidden: 16,
            classes: 2,
            init_gain: 6.0,
        }
    }
}

impl SstaConfig {
    /// Small dimensions used by gradient checks.
    pub fn toy() -> Self {
        SstaConfig {
            frame_height: 4,
            frame_width: 4,
            conv_channels: 2,
            kernel_size: 3,
            attention_dim: 2,
            fc_dim: 4,
            ssa_stages: 2,
            sequence_length: 3,
            conv1d_channels: 2,
            conv1d_kernel: 3,
            lstm_hidden: 3,
            classes: 2,
            init_gain: 6.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("model.frame_height", self.frame_height),
            ("model.frame_width", self.frame_width),
            ("model.conv_channels", self.conv_channels),
            ("model.kernel_size", self.kernel_size),
            ("model.attention_dim", self.attention_dim),
            ("model.fc_dim", self.fc_dim),
            ("model.ssa_stages", self.ssa_stages),
            ("model.sequence_length", self.sequence_length),
            ("model.conv1d_channels", self.conv1d_channels),
            ("model.conv1d_kernel", self.conv1d_kernel),
            ("model.lstm_hidden", self.lstm_hidden),
        ];
        for (key, v) in dims {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.frame_height < 2 || self.frame_width < 2 {
            return Err(Error::config(
                "model.frame_height",
                "frames must be at least 2×2",
            ));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config("model.kernel_size", "must be odd"));
        }
        if self.conv1d_kernel % 2 == 0 {
            return Err(Error::config("model.conv1d_kernel", "must be odd"));
        }
        if !(self.init_gain.is_finite() && self.init_gain > 0.0) {
            return Err(Error::config("model.init_gain", "must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::config("model.classes", "need at least 2 classes"));
        }
        Ok(())
    }

    /// Spatial grid seen by stage `s`.
    pub fn stage_grid(&self, s: usize) -> (usize, usize) {
        if s == 0 {
            (self.frame_height, self.frame_width)
        } else {
            squarest_factors(self.fc_dim)
        }
    }

    pub fn parameter_count(&self) -> usize {
        Layout::new(self).total
    }
}

fn squarest_factors(n: usize) -> (usize, usize) {
    let mut best = (1, n);
    let mut a = 1;
    while a * a <= n {
        if n % a == 0 {
            best = (a, n / a);
        }
        a += 1;
    }
    best
}

/// One named parameter block inside the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
    pub fan_in: usize,
}

impl BlockSpec {
    pub fn is_bias(&self) -> bool {
        self.name.ends_with("_b")
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StageLayout {
    pub grid_h: usize,
    pub grid_w: usize,
    pub conv_w: Range<usize>,
    pub conv_b: Range<usize>,
    /// Ω_f, Ω_g, Ω_h, Ω_v are contiguous from `omega_f.start` to `omega_v.end`.
    pub omega_f: Range<usize>,
    pub omega_v: Range<usize>,
    pub fc_w: Range<usize>,
    pub fc_b: Range<usize>,
}

impl StageLayout {
    pub fn positions(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

/// Canonical order of every parameter block.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub stages: Vec<StageLayout>,
    pub conv1d_w: Range<usize>,
    pub conv1d_b: Range<usize>,
    /// Φ_AS, Φ_Ah, Φ_BS, Φ_Bh, Φ_CS, Φ_Ch
    pub phi: [Range<usize>; 6],
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub blocks: Vec<BlockSpec>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &SstaConfig) -> Layout {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
            let len: usize = shape.iter().product();
            let range = offset..offset + len;
            offset += len;
            blocks.push(BlockSpec {
                name,
                shape,
                range: range.clone(),
                fan_in,
            });
            range
        };
        let ch = cfg.conv_channels;
        let k = cfg.kernel_size;
        let mut stages = Vec::with_capacity(cfg.ssa_stages);
        for s in 0..cfg.ssa_stages {
            let (grid_h, grid_w) = cfg.stage_grid(s);
            let p = grid_h * grid_w;
            let conv_fan = k * k;
            let conv_w = push(format!("stage{s}.conv_w"), vec![ch, 1, k, k], conv_fan);
            let conv_b = push(format!("stage{s}.conv_b"), vec![ch], conv_fan);
            let omega_f = push(format!("stage{s}.omega_f"), vec![cfg.attention_dim, ch], ch);
            push(format!("stage{s}.omega_g"), vec![cfg.attention_dim, ch], ch);
            push(format!("stage{s}.omega_h"), vec![ch, ch], ch);
            let omega_v = push(format!("stage{s}.omega_v"), vec![ch, ch], ch);
            stages.push(StageLayout {
                grid_h,
                grid_w,
                conv_w,
                conv_b,
                omega_f,
                omega_v,
                fc_w: push(format!("stage{s}.fc_w"), vec![cfg.fc_dim, p * ch], p * ch),
                fc_b: push(format!("stage{s}.fc_b"), vec![cfg.fc_dim], p * ch),
            });
        }
        let c1 = cfg.conv1d_channels;
        let k1 = cfg.conv1d_kernel;
        let hid = cfg.lstm_hidden;
        let conv1d_w = push("conv1d_w".into(), vec![c1, cfg.fc_dim, k1], cfg.fc_dim * k1);
        let conv1d_b = push("conv1d_b".into(), vec![c1], cfg.fc_dim * k1);
        let phi = [
            push("lstm.phi_as".into(), vec![hid, c1], c1),
            push("lstm.phi_ah".into(), vec![hid, hid], hid),
            push("lstm.phi_bs".into(), vec![hid, c1], c1),
            push("lstm.phi_bh".into(), vec![hid, hid], hid),
            push("lstm.phi_cs".into(), vec![hid, c1], c1),
            push("lstm.phi_ch".into(), vec![hid, hid], hid),
        ];
        let head_w = push("head_w".into(), vec![cfg.classes, hid], hid);
        let head_b = push("head_b".into(), vec![cfg.classes], hid);
        Layout {
            stages,
            conv1d_w,
            conv1d_b,
            phi,
            head_w,
            head_b,
            blocks,
            total: offset,
        }
    }
}
