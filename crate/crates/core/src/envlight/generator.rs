//! Learnable environment light: a low-resolution embedding decoded by a small
//! fully convolutional network into an HDR lat-long map.
//!
//! Architecture per upsampling stage: conv3x3 → LeakyReLU → conv3x3 →
//! LeakyReLU → nearest 2x upsample. A final conv3x3 to three channels with a
//! softplus head keeps radiance non-negative. Convolutions wrap around the
//! azimuth and clamp at the poles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GirError, Result};
use crate::math::Rgb;

use super::map::EnvironmentMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Output channels of each upsampling stage; one doubling per entry.
    pub stage_widths: Vec<usize>,
    pub leak: f64,
    /// Radiance of the (nearly constant) map produced at initialization.
    pub init_radiance: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            height: 16,
            width: 32,
            stage_widths: vec![64, 32, 16, 16],
            leak: 0.01,
            init_radiance: 1.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn output_height(&self) -> usize {
        self.height << self.stage_widths.len()
    }

    pub fn output_width(&self) -> usize {
        self.width << self.stage_widths.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvLayer {
    cin: usize,
    cout: usize,
    weight_offset: usize,
    bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvGenerator {
    config: GeneratorConfig,
    layers: Vec<ConvLayer>,
    params: Vec<f64>,
}

/// Channel-major feature map.
#[derive(Debug, Clone)]
struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn plane(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.h * self.w..(ch + 1) * self.h * self.w]
    }

    /// Copy with a one-texel border: wrapped columns, clamped rows.
    fn padded(&self) -> Tensor {
        let (h, w) = (self.h, self.w);
        let (ph, pw) = (h + 2, w + 2);
        let mut out = Tensor::zeros(self.c, ph, pw);
        for ch in 0..self.c {
            let src = self.plane(ch);
            let dst = &mut out.data[ch * ph * pw..(ch + 1) * ph * pw];
            for py in 0..ph {
                let sy = (py as isize - 1).clamp(0, h as isize - 1) as usize;
                let row = &src[sy * w..(sy + 1) * w];
                let d = &mut dst[py * pw..(py + 1) * pw];
                d[1..=w].copy_from_slice(row);
                d[0] = row[w - 1];
                d[w + 1] = row[0];
            }
        }
        out
    }

    /// Transpose of [`Tensor::padded`].
    fn unpad(&self) -> Tensor {
        let (h, w) = (self.h - 2, self.w - 2);
        let pw = self.w;
        let mut out = Tensor::zeros(self.c, h, w);
        for ch in 0..self.c {
            let src = &self.data[ch * self.h * pw..(ch + 1) * self.h * pw];
            let dst = &mut out.data[ch * h * w..(ch + 1) * h * w];
            for py in 0..self.h {
                let sy = (py as isize - 1).clamp(0, h as isize - 1) as usize;
                let row = &src[py * pw..(py + 1) * pw];
                let d = &mut dst[sy * w..(sy + 1) * w];
                for x in 0..w {
                    d[x] += row[x + 1];
                }
                d[w - 1] += row[0];
                d[0] += row[w + 1];
            }
        }
        out
    }

    fn upsample(&self) -> Tensor {
        let (h, w) = (self.h * 2, self.w * 2);
        let mut out = Tensor::zeros(self.c, h, w);
        for ch in 0..self.c {
            let src = self.plane(ch);
            for y in 0..h {
                for x in 0..w {
                    out.data[(ch * h + y) * w + x] = src[(y / 2) * self.w + x / 2];
                }
            }
        }
        out
    }

    fn upsample_backward(&self) -> Tensor {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut out = Tensor::zeros(self.c, h, w);
        for ch in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    out.data[(ch * h + y / 2) * w + x / 2] += self.data[(ch * self.h + y) * self.w + x];
                }
            }
        }
        out
    }
}

/// Intermediate activations of one forward pass.
pub struct GeneratorTape {
    conv_inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl EnvGenerator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        if config.stage_widths.is_empty() || config.stage_widths.contains(&0) {
            return Err(GirError::invalid("generator needs at least one non-empty stage"));
        }
        if config.channels == 0 || config.height == 0 || config.width != 2 * config.height {
            return Err(GirError::DimensionMismatch(format!(
                "embedding must be C x h x 2h, got {} x {} x {}",
                config.channels, config.height, config.width
            )));
        }
        let mut layers = Vec::new();
        let mut offset = config.channels * config.height * config.width;
        let mut cin = config.channels;
        let mut push = |cin: usize, cout: usize, offset: &mut usize| {
            let layer = ConvLayer {
                cin,
                cout,
                weight_offset: *offset,
                bias_offset: *offset + cout * cin * 9,
            };
            *offset += cout * cin * 9 + cout;
            layers.push(layer);
        };
        for &w in &config.stage_widths {
            push(cin, w, &mut offset);
            push(w, w, &mut offset);
            cin = w;
        }
        push(cin, 3, &mut offset);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; offset];
        let emb = config.channels * config.height * config.width;
        for p in &mut params[..emb] {
            *p = rng.random_range(-0.5..0.5);
        }
        let head = layers.len() - 1;
        for (li, l) in layers.iter().enumerate() {
            let bound = (6.0 / (l.cin * 9) as f64).sqrt() * if li == head { 0.05 } else { 1.0 };
            for p in &mut params[l.weight_offset..l.bias_offset] {
                *p = rng.random_range(-bound..bound);
            }
            if li == head {
                let b = softplus_inverse(config.init_radiance.max(1e-6));
                for p in &mut params[l.bias_offset..l.bias_offset + 3] {
                    *p = b;
                }
            }
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    /// Rebuilds a generator from a configuration and a full parameter vector.
    pub fn from_params(config: GeneratorConfig, params: Vec<f64>) -> Result<Self> {
        let mut g = Self::new(config)?;
        if params.len() != g.params.len() {
            return Err(GirError::DimensionMismatch(format!(
                "generator expects {} parameters, got {}",
                g.params.len(),
                params.len()
            )));
        }
        g.params = params;
        Ok(g)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn embedding_len(&self) -> usize {
        self.config.channels * self.config.height * self.config.width
    }

    fn conv_forward(&self, l: &ConvLayer, input: &Tensor) -> Tensor {
        let pad = input.padded();
        let (h, w) = (input.h, input.w);
        let pw = w + 2;
        let weights = &self.params[l.weight_offset..l.bias_offset];
        let bias = &self.params[l.bias_offset..l.bias_offset + l.cout];
        let planes: Vec<Vec<f64>> = (0..l.cout)
            .into_par_iter()
            .map(|co| {
                let mut out = vec![bias[co]; h * w];
                for ci in 0..l.cin {
                    let src = pad.plane(ci);
                    let k = &weights[(co * l.cin + ci) * 9..(co * l.cin + ci) * 9 + 9];
                    for y in 0..h {
                        let o = &mut out[y * w..(y + 1) * w];
                        for ky in 0..3 {
                            let row = &src[(y + ky) * pw..(y + ky + 1) * pw];
                            let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
                            for x in 0..w {
                                o[x] += k0 * row[x] + k1 * row[x + 1] + k2 * row[x + 2];
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Tensor {
            c: l.cout,
            h,
            w,
            data: planes.concat(),
        }
    }

    /// Returns the input gradient; accumulates parameter gradients in `grad`.
    fn conv_backward(&self, l: &ConvLayer, input: &Tensor, d_out: &Tensor, grad: &mut [f64]) -> Tensor {
        let pad = input.padded();
        let (h, w) = (input.h, input.w);
        let pw = w + 2;
        let weights = &self.params[l.weight_offset..l.bias_offset];
        let d_w: Vec<Vec<f64>> = (0..l.cout)
            .into_par_iter()
            .map(|co| {
                let g = d_out.plane(co);
                let mut dk = vec![0.0; l.cin * 9 + 1];
                dk[l.cin * 9] = g.iter().sum();
                for ci in 0..l.cin {
                    let src = pad.plane(ci);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let mut acc = 0.0;
                            for y in 0..h {
                                let row = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                                let gr = &g[y * w..(y + 1) * w];
                                acc += row.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                            }
                            dk[ci * 9 + ky * 3 + kx] = acc;
                        }
                    }
                }
                dk
            })
            .collect();
        for (co, dk) in d_w.iter().enumerate() {
            let wo = l.weight_offset + co * l.cin * 9;
            for (t, v) in grad[wo..wo + l.cin * 9].iter_mut().zip(dk) {
                *t += v;
            }
            grad[l.bias_offset + co] += dk[l.cin * 9];
        }
        let d_pad: Vec<Vec<f64>> = (0..l.cin)
            .into_par_iter()
            .map(|ci| {
                let mut dp = vec![0.0; (h + 2) * pw];
                for co in 0..l.cout {
                    let g = d_out.plane(co);
                    let k = &weights[(co * l.cin + ci) * 9..(co * l.cin + ci) * 9 + 9];
                    for y in 0..h {
                        let gr = &g[y * w..(y + 1) * w];
                        for ky in 0..3 {
                            let row = &mut dp[(y + ky) * pw..(y + ky + 1) * pw];
                            let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
                            for x in 0..w {
                                let v = gr[x];
                                row[x] += k0 * v;
                                row[x + 1] += k1 * v;
                                row[x + 2] += k2 * v;
                            }
                        }
                    }
                }
                dp
            })
            .collect();
        Tensor {
            c: l.cin,
            h: h + 2,
            w: pw,
            data: d_pad.concat(),
        }
        .unpad()
    }

    pub fn forward_with_tape(&self) -> (EnvironmentMap, GeneratorTape) {
        let c = &self.config;
        let mut x = Tensor {
            c: c.channels,
            h: c.height,
            w: c.width,
            data: self.params[..self.embedding_len()].to_vec(),
        };
        let mut tape = GeneratorTape {
            conv_inputs: Vec::new(),
            pre_activations: Vec::new(),
        };
        let leak = c.leak;
        let stages = c.stage_widths.len();
        for s in 0..stages {
            for half in 0..2 {
                let l = &self.layers[2 * s + half];
                let z = self.conv_forward(l, &x);
                tape.conv_inputs.push(x);
                x = Tensor {
                    data: z.data.iter().map(|&v| if v > 0.0 { v } else { leak * v }).collect(),
                    ..z.clone()
                };
                tape.pre_activations.push(z);
            }
            x = x.upsample();
        }
        let head = &self.layers[self.layers.len() - 1];
        let z = self.conv_forward(head, &x);
        tape.conv_inputs.push(x);
        let (h, w) = (z.h, z.w);
        let mut texels = Vec::with_capacity(h * w);
        for p in 0..h * w {
            texels.push(Rgb::new(
                softplus(z.data[p]),
                softplus(z.data[h * w + p]),
                softplus(z.data[2 * h * w + p]),
            ));
        }
        tape.pre_activations.push(z);
        let env = EnvironmentMap::new(w, h, texels).expect("generator output shape is 2H x H");
        (env, tape)
    }

    pub fn generate(&self) -> EnvironmentMap {
        self.forward_with_tape().0
    }

    /// Gradient of the loss w.r.t. every parameter, given the gradient w.r.t.
    /// the generated texels.
    pub fn backward(&self, tape: &GeneratorTape, d_env: &[Rgb]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let zh = tape.pre_activations.last().unwrap();
        let (h, w) = (zh.h, zh.w);
        let mut d = Tensor::zeros(3, h, w);
        for p in 0..h * w {
            for ch in 0..3 {
                let z = zh.data[ch * h * w + p];
                d.data[ch * h * w + p] = d_env[p][ch] / (1.0 + (-z).exp());
            }
        }
        let head = self.layers.len() - 1;
        let mut d_x = self.conv_backward(&self.layers[head], &tape.conv_inputs[head], &d, &mut grad);
        let leak = self.config.leak;
        for s in (0..self.config.stage_widths.len()).rev() {
            d_x = d_x.upsample_backward();
            for half in (0..2).rev() {
                let li = 2 * s + half;
                let z = &tape.pre_activations[li];
                for (g, &zv) in d_x.data.iter_mut().zip(&z.data) {
                    if zv <= 0.0 {
                        *g *= leak;
                    }
                }
                d_x = self.conv_backward(&self.layers[li], &tape.conv_inputs[li], &d_x, &mut grad);
            }
        }
        for (g, v) in grad.iter_mut().zip(&d_x.data) {
            *g += v;
        }
        grad
    }

    /// Serialized as: magic, config JSON length (u64 LE), config JSON,
    /// parameter count (u64 LE), parameters (f64 LE).
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::with_capacity(16 + cfg.len() + 8 * self.params.len());
        out.extend_from_slice(GEN_MAGIC);
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| GirError::format("generator blob", d);
        let rest = bytes.strip_prefix(GEN_MAGIC.as_slice()).ok_or_else(|| bad("bad magic"))?;
        let read_u64 = |b: &[u8]| -> Result<u64> {
            Ok(u64::from_le_bytes(b.get(..8).ok_or_else(|| bad("truncated"))?.try_into().unwrap()))
        };
        let n = read_u64(rest)? as usize;
        let rest = &rest[8..];
        let cfg: GeneratorConfig = serde_json::from_slice(rest.get(..n).ok_or_else(|| bad("truncated config"))?)?;
        let rest = &rest[n..];
        let count = read_u64(rest)? as usize;
        let rest = &rest[8..];
        if rest.len() != 8 * count {
            return Err(bad("parameter payload length"));
        }
        let params = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(cfg, params)
    }
}

const GEN_MAGIC: &[u8; 8] = b"GIRGEN1\0";
