use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Image with `channels` interleaved values per pixel, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Input(format!(
                "frame must be at least 2×2, got {height}×{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!(
                "frame must have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}×{width}×{channels} frame needs {} values, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input(format!(
                "pixel {i} = {} is outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Frame {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Grayscale frame from a function of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Frame::new(height, width, 1, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Builds a frame of the same shape, sampling every output value from `f(y, x, c)`.
    pub(crate) fn map_coords(&self, f: impl Fn(usize, usize, usize) -> f64) -> Frame {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Frame {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels,
        }
    }
}

/// Reads a binary (P5) 8-bit PGM; samples map linearly onto `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Frame> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated PGM header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(Error::Format(format!("expected P5 magic, found {magic:?}")));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM {what}: {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "only 8-bit PGM is supported, maxval = {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster_start = pos + 1;
    let raster = bytes
        .get(raster_start..raster_start + width * height)
        .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
    let scale = maxval as f64;
    let pixels = raster
        .iter()
        .map(|&b| (b as f64 / scale).min(1.0))
        .collect();
    Frame::new(height, width, 1, pixels)
}

/// Writes a grayscale frame as a binary 8-bit PGM (values rounded to the nearest level).
pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let bytes = encode_pgm(frame)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn encode_pgm(frame: &Frame) -> Result<Vec<u8>> {
    if frame.channels != 1 {
        return Err(Error::Input(
            "PGM output needs a single-channel frame".into(),
        ));
    }
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(frame.pixels.iter().map(|p| (p * 255.0).round() as u8));
    Ok(out)
}
