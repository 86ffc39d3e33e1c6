//! Histogram-of-oriented-gradients descriptor.
//!
//! Gradients use central differences in the interior and one-sided
//! differences on the border. Each pixel's magnitude is split between the
//! two orientation bins whose centres bracket its angle (circular
//! interpolation over bins only; there is no spatial interpolation between
//! neighbouring cells). Blocks of `block_side × block_side` cells slide by
//! `block_stride` cells and are normalised as `v / sqrt(|v|² + η²)`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::frame::Frame;
use crate::csvfmt::join_f64;
use crate::error::{Error, Result};

/// How multi-channel frames are reduced to a single gradient per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelPolicy {
    /// Per pixel, keep the channel whose gradient magnitude is largest.
    #[default]
    MaxMagnitude,
    /// Use one channel only.
    Single(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Radians in `[0, π)` (unsigned) or `[0, 2π)` (signed).
    pub orientation: Vec<f64>,
    pub signed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HogConfig {
    /// Cell side in pixels.
    pub cell_size: usize,
    /// Orientation bins per cell.
    pub bins: usize,
    /// Block side in cells; a block holds `block_side²` cells.
    pub block_side: usize,
    /// Block step in cells.
    pub block_stride: usize,
    /// Normalisation constant η.
    pub eta: f64,
    pub signed_orientation: bool,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            cell_size: 8,
            bins: 9,
            block_side: 2,
            block_stride: 1,
            eta: 1e-5,
            signed_orientation: false,
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size == 0 {
            return Err(Error::config("hog.cell_size", "must be at least 1"));
        }
        if self.bins < 2 {
            return Err(Error::config(
                "hog.bins",
                "need at least 2 orientation bins",
            ));
        }
        if self.block_side == 0 {
            return Err(Error::config("hog.block_side", "must be at least 1"));
        }
        if self.block_stride == 0 {
            return Err(Error::config("hog.block_stride", "must be at least 1"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config("hog.eta", "must be a positive finite number"));
        }
        Ok(())
    }

    /// Cells per block (`a`).
    pub fn cells_per_block(&self) -> usize {
        self.block_side * self.block_side
    }

    fn range(&self) -> f64 {
        if self.signed_orientation {
            2.0 * PI
        } else {
            PI
        }
    }
}

/// Per-cell orientation histograms, row-major over cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellHistograms {
    pub cells_y: usize,
    pub cells_x: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl CellHistograms {
    pub fn cell(&self, cy: usize, cx: usize) -> &[f64] {
        let start = (cy * self.cells_x + cx) * self.bins;
        &self.data[start..start + self.bins]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    /// Number of blocks `L`.
    pub blocks: usize,
    /// Values per block (`a · c`).
    pub block_len: usize,
    /// Concatenated normalised blocks, length `L · a · c`.
    pub values: Vec<f64>,
}

impl HogDescriptor {
    pub fn block(&self, b: usize) -> &[f64] {
        &self.values[b * self.block_len..(b + 1) * self.block_len]
    }
}

pub fn compute_gradients(
    frame: &Frame,
    policy: ChannelPolicy,
    signed: bool,
) -> Result<GradientField> {
    let (h, w, ch) = (frame.height(), frame.width(), frame.channels());
    if h < 2 || w < 2 {
        return Err(Error::Input(format!(
            "gradients need at least 2×2 pixels, got {h}×{w}"
        )));
    }
    let channels: Vec<usize> = match policy {
        ChannelPolicy::MaxMagnitude => (0..ch).collect(),
        ChannelPolicy::Single(c) if c < ch => vec![c],
        ChannelPolicy::Single(c) => {
            return Err(Error::Input(format!(
                "channel {c} does not exist in a {ch}-channel frame"
            )))
        }
    };

    let n = h * w;
    let mut field = GradientField {
        height: h,
        width: w,
        gx: vec![0.0; n],
        gy: vec![0.0; n],
        magnitude: vec![0.0; n],
        orientation: vec![0.0; n],
        signed,
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut best = None::<(f64, f64, f64)>;
            for &c in &channels {
                let gx = diff(|k| frame.get(y, k, c), x, w);
                let gy = diff(|k| frame.get(k, x, c), y, h);
                let m = (gx * gx + gy * gy).sqrt();
                if best.is_none_or(|(bm, _, _)| m > bm) {
                    best = Some((m, gx, gy));
                }
            }
            let (m, gx, gy) = best.expect("at least one channel");
            field.gx[i] = gx;
            field.gy[i] = gy;
            field.magnitude[i] = m;
            field.orientation[i] = orientation(gx, gy, signed);
        }
    }
    Ok(field)
}

fn diff(sample: impl Fn(usize) -> f64, i: usize, len: usize) -> f64 {
    if i == 0 {
        sample(1) - sample(0)
    } else if i == len - 1 {
        sample(len - 1) - sample(len - 2)
    } else {
        (sample(i + 1) - sample(i - 1)) / 2.0
    }
}

fn orientation(gx: f64, gy: f64, signed: bool) -> f64 {
    if gx == 0.0 && gy == 0.0 {
        return 0.0;
    }
    let range = if signed { 2.0 * PI } else { PI };
    let mut a = gy.atan2(gx).rem_euclid(range);
    // rem_euclid can round up to exactly `range`
    if a >= range {
        a = 0.0;
    }
    a
}

/// Splits `magnitude` at angle `theta` between the two nearest bin centres.
///
/// Returns `(lower bin, weight)` pairs; centres sit at `(j + ½)·range/bins`
/// and interpolation wraps around the circle.
pub fn bin_weights(theta: f64, magnitude: f64, bins: usize, range: f64) -> [(usize, f64); 2] {
    let u = theta / (range / bins as f64) - 0.5;
    let lo = u.floor();
    let frac = u - lo;
    let j0 = (lo as i64).rem_euclid(bins as i64) as usize;
    let j1 = (j0 + 1) % bins;
    [(j0, magnitude * (1.0 - frac)), (j1, magnitude * frac)]
}

pub fn cell_histograms(g: &GradientField, cfg: &HogConfig) -> Result<CellHistograms> {
    cfg.validate()?;
    let cells_y = g.height / cfg.cell_size;
    let cells_x = g.width / cfg.cell_size;
    if cells_y == 0 || cells_x == 0 {
        return Err(Error::Input(format!(
            "{}×{} image has no complete {}-pixel cell",
            g.height, g.width, cfg.cell_size
        )));
    }
    let range = cfg.range();
    let mut data = vec![0.0; cells_y * cells_x * cfg.bins];
    for y in 0..cells_y * cfg.cell_size {
        for x in 0..cells_x * cfg.cell_size {
            let i = y * g.width + x;
            let m = g.magnitude[i];
            if m == 0.0 {
                continue;
            }
            let base = ((y / cfg.cell_size) * cells_x + x / cfg.cell_size) * cfg.bins;
            for (j, v) in bin_weights(g.orientation[i], m, cfg.bins, range) {
                data[base + j] += v;
            }
        }
    }
    Ok(CellHistograms {
        cells_y,
        cells_x,
        bins: cfg.bins,
        data,
    })
}

/// Gathers and normalises blocks from precomputed cell histograms.
pub fn normalize_blocks(cells: &CellHistograms, cfg: &HogConfig) -> Result<HogDescriptor> {
    cfg.validate()?;
    if cells.cells_y < cfg.block_side || cells.cells_x < cfg.block_side {
        return Err(Error::Input(format!(
            "{}×{} cells cannot hold a {}×{} block",
            cells.cells_y, cells.cells_x, cfg.block_side, cfg.block_side
        )));
    }
    let blocks_y = (cells.cells_y - cfg.block_side) / cfg.block_stride + 1;
    let blocks_x = (cells.cells_x - cfg.block_side) / cfg.block_stride + 1;
    let block_len = cfg.cells_per_block() * cells.bins;
    let mut values = Vec::with_capacity(blocks_y * blocks_x * block_len);
    let eta2 = cfg.eta * cfg.eta;
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let start = values.len();
            for cy in 0..cfg.block_side {
                for cx in 0..cfg.block_side {
                    values.extend_from_slice(
                        cells.cell(by * cfg.block_stride + cy, bx * cfg.block_stride + cx),
                    );
                }
            }
            let block = &mut values[start..];
            let scale = 1.0 / (block.iter().map(|v| v * v).sum::<f64>() + eta2).sqrt();
            block.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(HogDescriptor {
        blocks: blocks_y * blocks_x,
        block_len,
        values,
    })
}

pub fn hog_descriptor(frame: &Frame, cfg: &HogConfig) -> Result<HogDescriptor> {
    cfg.validate()?;
    let g = compute_gradients(frame, ChannelPolicy::MaxMagnitude, cfg.signed_orientation)?;
    let cells = cell_histograms(&g, cfg)?;
    normalize_blocks(&cells, cfg)
}

/// One descriptor per line, 17 significant digits, no header.
pub fn write_descriptors_csv<W: Write>(mut out: W, descriptors: &[HogDescriptor]) -> Result<()> {
    for d in descriptors {
        writeln!(out, "{}", join_f64(&d.values))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_frame(rng: &mut Rng, h: usize, w: usize) -> Frame {
        let px: Vec<f64> = (0..h * w).map(|_| rng.uniform()).collect();
        Frame::new(h, w, 1, px).unwrap()
    }

    #[test]
    fn constant_frame_has_no_gradient() {
        let f = Frame::from_fn(6, 7, |_, _| 0.4).unwrap();
        let g = compute_gradients(&f, ChannelPolicy::MaxMagnitude, false).unwrap();
        assert!(g.magnitude.iter().all(|m| *m == 0.0));
        assert!(g.orientation.iter().all(|o| *o == 0.0));
    }

    #[test]
    fn horizontal_ramp() {
        let w = 8;
        let f = Frame::from_fn(5, w, |_, x| x as f64 / w as f64).unwrap();
        let g = compute_gradients(&f, ChannelPolicy::MaxMagnitude, false).unwrap();
        assert!(g.gy.iter().all(|v| *v == 0.0));
        for y in 0..5 {
            for x in 1..w - 1 {
                assert!((g.gx[y * w + x] - 1.0 / w as f64).abs() < 1e-15);
            }
        }
        assert!(g.orientation.iter().all(|o| *o == 0.0));
    }

    #[test]
    fn gradients_match_loop_oracle() {
        let mut rng = Rng::new(8);
        let f = random_frame(&mut rng, 8, 8);
        let g = compute_gradients(&f, ChannelPolicy::MaxMagnitude, false).unwrap();
        let px = |y: i64, x: i64| f.get(y as usize, x as usize, 0);
        for y in 0..8i64 {
            for x in 0..8i64 {
                let gx = match x {
                    0 => px(y, 1) - px(y, 0),
                    7 => px(y, 7) - px(y, 6),
                    _ => 0.5 * (px(y, x + 1) - px(y, x - 1)),
                };
                let gy = match y {
                    0 => px(1, x) - px(0, x),
                    7 => px(7, x) - px(6, x),
                    _ => 0.5 * (px(y + 1, x) - px(y - 1, x)),
                };
                let i = (y * 8 + x) as usize;
                assert!((g.gx[i] - gx).abs() < 1e-12);
                assert!((g.gy[i] - gy).abs() < 1e-12);
                assert!((g.magnitude[i] - gx.hypot(gy)).abs() < 1e-12);
                let mut ang = gy.atan2(gx);
                if ang < 0.0 {
                    ang += PI;
                }
                if ang >= PI {
                    ang -= PI;
                }
                assert!((g.orientation[i] - ang).abs() < 1e-12);
                assert!((0.0..PI).contains(&g.orientation[i]));
            }
        }
    }

    #[test]
    fn signed_orientation_range() {
        let mut rng = Rng::new(9);
        let f = random_frame(&mut rng, 6, 6);
        let g = compute_gradients(&f, ChannelPolicy::MaxMagnitude, true).unwrap();
        assert!(g.orientation.iter().all(|o| (0.0..2.0 * PI).contains(o)));
    }

    #[test]
    fn multichannel_keeps_strongest_channel() {
        // channel 1 carries a steep ramp, channel 0 and 2 are flat
        let mut px = Vec::new();
        for _y in 0..3 {
            for x in 0..4 {
                px.extend([0.2, x as f64 * 0.25, 0.7]);
            }
        }
        let f = Frame::new(3, 4, 3, px).unwrap();
        let g = compute_gradients(&f, ChannelPolicy::MaxMagnitude, false).unwrap();
        assert!(g.gx.iter().all(|v| (*v - 0.25).abs() < 1e-15));
        let only0 = compute_gradients(&f, ChannelPolicy::Single(0), false).unwrap();
        assert!(only0.magnitude.iter().all(|m| *m == 0.0));
        assert!(compute_gradients(&f, ChannelPolicy::Single(3), false).is_err());
    }

    #[test]
    fn too_small_frame_is_rejected() {
        let g = GradientField {
            height: 4,
            width: 4,
            gx: vec![0.0; 16],
            gy: vec![0.0; 16],
            magnitude: vec![0.0; 16],
            orientation: vec![0.0; 16],
            signed: false,
        };
        let cfg = HogConfig::default();
        assert!(matches!(cell_histograms(&g, &cfg), Err(Error::Input(_))));
    }

    fn single_pixel_field(theta: f64, m: f64) -> GradientField {
        let mut g = GradientField {
            height: 2,
            width: 2,
            gx: vec![0.0; 4],
            gy: vec![0.0; 4],
            magnitude: vec![0.0; 4],
            orientation: vec![0.0; 4],
            signed: false,
        };
        g.magnitude[0] = m;
        g.orientation[0] = theta;
        g
    }

    #[test]
    fn interpolation_cases() {
        let cfg = HogConfig {
            cell_size: 2,
            bins: 9,
            ..HogConfig::default()
        };
        let width = PI / 9.0;

        let zero = cell_histograms(&single_pixel_field(0.3, 0.0), &cfg).unwrap();
        assert!(zero.data.iter().all(|v| *v == 0.0));

        // exactly at the centre of bin 3
        let h = cell_histograms(&single_pixel_field(3.5 * width, 2.0), &cfg).unwrap();
        for (j, v) in h.cell(0, 0).iter().enumerate() {
            let want = if j == 3 { 2.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "bin {j}: {v}");
        }

        // halfway between the centres of bins 4 and 5
        let h = cell_histograms(&single_pixel_field(5.0 * width, 2.0), &cfg).unwrap();
        let c = h.cell(0, 0);
        assert!((c[4] - 1.0).abs() < 1e-12 && (c[5] - 1.0).abs() < 1e-12);

        // angle 0 wraps between the last and first bins
        let h = cell_histograms(&single_pixel_field(0.0, 2.0), &cfg).unwrap();
        let c = h.cell(0, 0);
        assert!((c[8] - 1.0).abs() < 1e-12 && (c[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_frame_gives_zero_descriptor() {
        let f = Frame::from_fn(16, 16, |_, _| 0.7).unwrap();
        let d = hog_descriptor(&f, &HogConfig::default()).unwrap();
        assert_eq!(d.blocks, 1);
        assert_eq!(d.values.len(), 36);
        assert!(d.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn vertical_edge_puts_energy_at_horizontal_orientation() {
        let f = Frame::from_fn(16, 16, |_, x| if x < 8 { 0.1 } else { 0.9 }).unwrap();
        let cfg = HogConfig::default();
        let d = hog_descriptor(&f, &cfg).unwrap();
        // Orientation 0 lies between the centres of bins 8 and 0.
        let mut per_bin = [0.0; 9];
        for (i, v) in d.values.iter().enumerate() {
            per_bin[i % 9] += v * v;
        }
        let total: f64 = per_bin.iter().sum();
        assert!(total > 0.0);
        assert!((per_bin[0] + per_bin[8]) / total > 0.999);
        assert!((per_bin[0] - per_bin[8]).abs() < 1e-12);
    }

    #[test]
    fn block_norms_follow_eta_formula() {
        let mut rng = Rng::new(4);
        let cfg = HogConfig {
            cell_size: 4,
            eta: 0.05,
            ..HogConfig::default()
        };
        let f = random_frame(&mut rng, 16, 16);
        let g = compute_gradients(&f, ChannelPolicy::MaxMagnitude, false).unwrap();
        let cells = cell_histograms(&g, &cfg).unwrap();
        let d = normalize_blocks(&cells, &cfg).unwrap();
        assert_eq!(d.blocks, 9);
        assert_eq!(d.values.len(), d.blocks * cfg.cells_per_block() * cfg.bins);
        for b in 0..d.blocks {
            let by = b / 3;
            let bx = b % 3;
            let mut raw2 = 0.0;
            for cy in 0..2 {
                for cx in 0..2 {
                    raw2 += cells
                        .cell(by + cy, bx + cx)
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>();
                }
            }
            let n = d.block(b).iter().map(|v| v * v).sum::<f64>().sqrt();
            let want = raw2.sqrt() / (raw2 + cfg.eta * cfg.eta).sqrt();
            assert!((n - want).abs() < 1e-12);
            assert!(n <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn csv_has_one_row_per_descriptor() {
        let d = HogDescriptor {
            blocks: 1,
            block_len: 2,
            values: vec![0.5, 0.25],
        };
        let mut buf = Vec::new();
        write_descriptors_csv(&mut buf, &[d.clone(), d]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "5.0000000000000000e-1,2.5000000000000000e-1\n5.0000000000000000e-1,2.5000000000000000e-1\n"
        );
    }
}
