//! Portable float map: binary f32 images, bottom row first.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::envlight::EnvironmentMap;
use crate::error::{GirError, Result};
use crate::frame::Image;
use crate::math::Rgb;

/// Decoded PFM. `data` is row-major, top row first, `channels` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(GirError::invalid(format!("PFM supports 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(GirError::DimensionMismatch("PFM data length".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_rgb(width: usize, height: usize, px: &[Rgb]) -> Result<Self> {
        Self::new(width, height, 3, px.iter().flat_map(|c| c.iter().map(|v| *v as f32).collect::<Vec<_>>()).collect())
    }

    pub fn from_scalar(width: usize, height: usize, v: &[f64]) -> Result<Self> {
        Self::new(width, height, 1, v.iter().map(|x| *x as f32).collect())
    }

    pub fn from_image(img: &Image) -> Result<Self> {
        Self::from_rgb(img.width, img.height, &img.pixels)
    }

    pub fn to_rgb(&self) -> Vec<Rgb> {
        match self.channels {
            3 => self
                .data
                .chunks_exact(3)
                .map(|c| Rgb::new(c[0] as f64, c[1] as f64, c[2] as f64))
                .collect(),
            _ => self.data.iter().map(|v| Rgb::repeat(*v as f64)).collect(),
        }
    }

    pub fn to_env(&self) -> Result<EnvironmentMap> {
        EnvironmentMap::new(self.width, self.height, self.to_rgb())
    }

    /// Little-endian encoding (negative scale).
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let tag = if self.channels == 3 { "PF" } else { "Pf" };
        write!(w, "{tag}\n{} {}\n-1.0\n", self.width, self.height)?;
        let row = self.width * self.channels;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for y in (0..self.height).rev() {
            for v in &self.data[y * row..(y + 1) * row] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read(r: impl Read) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let bad = |d: &str| GirError::format("PFM", d);
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("truncated header"));
            }
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let channels = match tokens[0].as_str() {
            "PF" => 3,
            "Pf" => 1,
            t => return Err(bad(&format!("unknown magic `{t}`"))),
        };
        let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
        let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(bad("scale must be non-zero"));
        }
        let little = scale < 0.0;
        let row = width * channels;
        let mut raw = vec![0u8; row * height * 4];
        r.read_exact(&mut raw).map_err(|_| bad("truncated pixel data"))?;
        let mut data = vec![0f32; row * height];
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            let (y, x) = (k / row, k % row);
            data[(height - 1 - y) * row + x] = v;
        }
        Self::new(width, height, channels, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let f = std::fs::File::open(p).map_err(|_| GirError::MissingFile(p.display().to_string()))?;
        Self::read(f)
    }
}
