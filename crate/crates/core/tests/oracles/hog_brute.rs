//! Brute-force HoG: every block is rebuilt from raw pixels, and each pixel's
//! vote into bin `j` is a triangular kernel of its circular distance to the
//! bin centre. Shares no code with the library.

#![allow(dead_code)]

use std::f64::consts::PI;

pub struct BruteConfig {
    pub cell: usize,
    pub bins: usize,
    pub block: usize,
    pub stride: usize,
    pub eta: f64,
    pub signed: bool,
}

/// `img[y][x]`, single channel.
pub fn gradient(img: &[Vec<f64>], y: usize, x: usize) -> (f64, f64) {
    let h = img.len();
    let w = img[0].len();
    let gx = if x == 0 {
        img[y][1] - img[y][0]
    } else if x == w - 1 {
        img[y][w - 1] - img[y][w - 2]
    } else {
        0.5 * (img[y][x + 1] - img[y][x - 1])
    };
    let gy = if y == 0 {
        img[1][x] - img[0][x]
    } else if y == h - 1 {
        img[h - 1][x] - img[h - 2][x]
    } else {
        0.5 * (img[y + 1][x] - img[y - 1][x])
    };
    (gx, gy)
}

fn angle(gx: f64, gy: f64, signed: bool) -> f64 {
    if gx == 0.0 && gy == 0.0 {
        return 0.0;
    }
    let mut a = gy.atan2(gx);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    if !signed && a >= PI {
        a -= PI;
    }
    let range = if signed { 2.0 * PI } else { PI };
    if a >= range {
        a -= range;
    }
    a
}

fn vote(theta: f64, bin: usize, bins: usize, range: f64) -> f64 {
    let width = range / bins as f64;
    let centre = (bin as f64 + 0.5) * width;
    let mut d = (theta - centre).abs();
    if d > range / 2.0 {
        d = range - d;
    }
    (1.0 - d / width).max(0.0)
}

pub fn descriptor(img: &[Vec<f64>], cfg: &BruteConfig) -> Vec<f64> {
    let range = if cfg.signed { 2.0 * PI } else { PI };
    let cells_y = img.len() / cfg.cell;
    let cells_x = img[0].len() / cfg.cell;
    let mut out = Vec::new();
    let mut by = 0;
    while by + cfg.block <= cells_y {
        let mut bx = 0;
        while bx + cfg.block <= cells_x {
            let mut v = Vec::new();
            for cy in by..by + cfg.block {
                for cx in bx..bx + cfg.block {
                    for bin in 0..cfg.bins {
                        let mut acc = 0.0;
                        for y in cy * cfg.cell..(cy + 1) * cfg.cell {
                            for x in cx * cfg.cell..(cx + 1) * cfg.cell {
                                let (gx, gy) = gradient(img, y, x);
                                let m = (gx * gx + gy * gy).sqrt();
                                acc += m * vote(angle(gx, gy, cfg.signed), bin, cfg.bins, range);
                            }
                        }
                        v.push(acc);
                    }
                }
            }
            let norm = (v.iter().map(|a| a * a).sum::<f64>() + cfg.eta * cfg.eta).sqrt();
            out.extend(v.iter().map(|a| a / norm));
            bx += cfg.stride;
        }
        by += cfg.stride;
    }
    out
}
