//! Augmentation transforms; each is applied to the original image independently.

use std::fmt;
use std::str::FromStr;

use super::frame::Frame;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    Identity,
    HorizontalFlip,
    /// Degrees, counter-clockwise, in `[-30, 30]`.
    Rotate(f64),
    /// Additive offset in `[-0.3, 0.3]`; results are clamped to `[0, 1]`.
    Brightness(f64),
    /// Scale factor in `[0.8, 1.25]` about the image centre.
    Zoom(f64),
}

impl AugmentOp {
    pub fn validate(&self) -> Result<()> {
        let (name, v, lo, hi) = match *self {
            AugmentOp::Identity | AugmentOp::HorizontalFlip => return Ok(()),
            AugmentOp::Rotate(a) => ("rotation angle", a, -30.0, 30.0),
            AugmentOp::Brightness(b) => ("brightness offset", b, -0.3, 0.3),
            AugmentOp::Zoom(z) => ("zoom factor", z, 0.8, 1.25),
        };
        if !(lo..=hi).contains(&v) {
            return Err(Error::Parameter(format!("{name} {v} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn apply(&self, f: &Frame) -> Result<Frame> {
        self.validate()?;
        let (h, w) = (f.height(), f.width());
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        Ok(match *self {
            AugmentOp::Identity => f.clone(),
            AugmentOp::HorizontalFlip => f.map_coords(|y, x, c| f.get(y, w - 1 - x, c)),
            AugmentOp::Brightness(b) => {
                f.map_coords(|y, x, c| (f.get(y, x, c) + b).clamp(0.0, 1.0))
            }
            AugmentOp::Rotate(deg) => {
                let (s, co) = deg.to_radians().sin_cos();
                // inverse-map each output pixel into the source
                f.map_coords(|y, x, c| {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    let sx = co * dx - s * dy + cx;
                    let sy = s * dx + co * dy + cy;
                    bilinear(f, sy, sx, c)
                })
            }
            AugmentOp::Zoom(z) => f.map_coords(|y, x, c| {
                let sx = (x as f64 - cx) / z + cx;
                let sy = (y as f64 - cy) / z + cy;
                bilinear(f, sy, sx, c)
            }),
        })
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentOp::Identity => write!(f, "identity"),
            AugmentOp::HorizontalFlip => write!(f, "flip"),
            AugmentOp::Rotate(a) => write!(f, "rotate:{a}"),
            AugmentOp::Brightness(b) => write!(f, "brightness:{b}"),
            AugmentOp::Zoom(z) => write!(f, "zoom:{z}"),
        }
    }
}

impl FromStr for AugmentOp {
    type Err = Error;

    /// `identity`, `flip`, `rotate:DEG`, `brightness:OFFSET`, `zoom:FACTOR`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::Parameter(format!("`{name}` needs a value, e.g. {name}:0.1")))?
                .parse::<f64>()
                .map_err(|_| Error::Parameter(format!("bad number in augmentation `{s}`")))
        };
        let op = match name {
            "identity" => AugmentOp::Identity,
            "flip" | "hflip" | "horizontal_flip" => AugmentOp::HorizontalFlip,
            "rotate" => AugmentOp::Rotate(num(arg)?),
            "brightness" => AugmentOp::Brightness(num(arg)?),
            "zoom" => AugmentOp::Zoom(num(arg)?),
            other => return Err(Error::Parameter(format!("unknown augmentation `{other}`"))),
        };
        op.validate()?;
        Ok(op)
    }
}

/// Parses a comma-separated list of operations; an empty string yields none.
pub fn parse_augment_spec(spec: &str) -> Result<Vec<AugmentOp>> {
    spec.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

fn bilinear(f: &Frame, y: f64, x: f64, c: usize) -> f64 {
    let y = y.clamp(0.0, (f.height() - 1) as f64);
    let x = x.clamp(0.0, (f.width() - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(f.height() - 1);
    let x1 = (x0 + 1).min(f.width() - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = f.get(y0, x0, c) * (1.0 - fx) + f.get(y0, x1, c) * fx;
    let bottom = f.get(y1, x0, c) * (1.0 - fx) + f.get(y1, x1, c) * fx;
    (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
}

/// The original image followed by one transformed copy per operation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub images: Vec<Frame>,
}

pub fn augment(f: &Frame, ops: &[AugmentOp]) -> Result<AugmentedSet> {
    for op in ops {
        op.validate()?;
    }
    let mut images = Vec::with_capacity(ops.len() + 1);
    images.push(f.clone());
    for op in ops {
        images.push(op.apply(f)?);
    }
    Ok(AugmentedSet { images })
}
