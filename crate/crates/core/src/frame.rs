//! Plain linear-RGB images and image metrics.

use crate::error::{GirError, Result};
use crate::math::Rgb;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(GirError::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(GirError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let s: f64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).norm_squared()).sum();
    Ok(s / (3 * a.pixels.len()) as f64)
}

/// Peak signal-to-noise ratio for images with peak value 1.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(-10.0 * mse(a, b)?.log10())
}

/// PSNR restricted to pixels where `mask` is set.
pub fn masked_psnr(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    a.same_shape(b)?;
    if mask.len() != a.pixels.len() {
        return Err(GirError::DimensionMismatch("mask length".into()));
    }
    let (mut s, mut n) = (0.0, 0usize);
    for ((x, y), m) in a.pixels.iter().zip(&b.pixels).zip(mask) {
        if *m {
            s += (x - y).norm_squared();
            n += 3;
        }
    }
    if n == 0 {
        return Err(GirError::invalid("empty mask"));
    }
    Ok(-10.0 * (s / n as f64).log10())
}
