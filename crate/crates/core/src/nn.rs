//! Minimal layers with hand-written backward passes.
//!
//! Parameters of a model live in one flat `Vec<f64>`; layers only hold
//! offsets into it. This keeps optimizer state and serialization trivial.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Shape manifest for a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.total;
        self.total += shape.iter().product::<usize>();
        self.tensors.push(TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        });
        offset
    }
}

/// Writes `params` as little-endian f64 to `<stem>.bin` and the layout to `<stem>.json`.
pub fn save_params(stem: &Path, layout: &ParamLayout, params: &[f64]) -> Result<()> {
    if params.len() != layout.total {
        return Err(Error::Shape(format!(
            "{} parameters for a layout of {}",
            params.len(),
            layout.total
        )));
    }
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(stem.with_extension("bin"), bytes)?;
    fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(layout)?)?;
    Ok(())
}

pub fn load_params(stem: &Path, expected: &ParamLayout) -> Result<Vec<f64>> {
    let layout: ParamLayout = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
    if &layout != expected {
        return Err(Error::Shape("parameter manifest does not match the model".into()));
    }
    let bytes = fs::read(stem.with_extension("bin"))?;
    if bytes.len() != layout.total * 8 {
        return Err(Error::Shape(format!(
            "parameter file has {} bytes, manifest needs {}",
            bytes.len(),
            layout.total * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// He-style normal initialisation of `n` weights with the given fan-in.
pub fn init_normal<R: Rng>(rng: &mut R, params: &mut [f64], fan_in: usize, gain: f64) {
    let std = gain / (fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    params.iter_mut().for_each(|p| *p = normal.sample(rng));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative from the pre-activation value.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    weight: usize,
    bias: usize,
}

impl Conv2d {
    pub fn new(layout: &mut ParamLayout, name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let weight = layout.push(format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel]);
        let bias = layout.push(format!("{name}.bias"), &[out_channels]);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        }
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight..self.weight + self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    /// Unfolds receptive fields into a `(C·k·k) × (oh·ow)` matrix.
    fn im2col(&self, input: &Array3<f64>, oh: usize, ow: usize) -> Array2<f64> {
        let (c, h, w) = input.dim();
        let k = self.kernel;
        let inp = input.as_slice().expect("standard layout");
        let mut cols = Array2::zeros((c * k * k, oh * ow));
        for ((i, ky, kx), mut row) in (0..c)
            .flat_map(|i| (0..k).flat_map(move |ky| (0..k).map(move |kx| (i, ky, kx))))
            .zip(cols.outer_iter_mut())
        {
            let row = row.as_slice_mut().expect("standard layout");
            for y in 0..oh {
                let iy = (y * self.stride + ky) as isize - self.padding as isize;
                if iy < 0 || iy as usize >= h {
                    continue;
                }
                let base = (i * h + iy as usize) * w;
                for x in 0..ow {
                    let ix = (x * self.stride + kx) as isize - self.padding as isize;
                    if ix >= 0 && (ix as usize) < w {
                        row[y * ow + x] = inp[base + ix as usize];
                    }
                }
            }
        }
        cols
    }

    fn weight_matrix<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.out_channels, self.fan_in()), &params[self.weight_range()])
            .expect("weight block")
    }

    pub fn forward(&self, params: &[f64], input: &Array3<f64>) -> Result<Array3<f64>> {
        let (c, h, w) = input.dim();
        if c != self.in_channels {
            return Err(Error::Shape(format!("conv expects {} channels, got {c}", self.in_channels)));
        }
        let (oh, ow) = self
            .output_size(h, w)
            .ok_or_else(|| Error::Shape(format!("input {h}x{w} smaller than kernel {}", self.kernel)))?;
        let input = input.as_standard_layout().into_owned();
        let mut out = self.weight_matrix(params).dot(&self.im2col(&input, oh, ow));
        let bias = &params[self.bias..self.bias + self.out_channels];
        for (mut row, &b) in out.outer_iter_mut().zip(bias) {
            row += b;
        }
        Ok(out
            .into_shape_with_order((self.out_channels, oh, ow))
            .expect("output planes"))
    }

    /// Accumulates parameter gradients into `grad_params` and returns the input gradient.
    pub fn backward(&self, params: &[f64], input: &Array3<f64>, grad_out: &Array3<f64>, grad_params: &mut [f64]) -> Array3<f64> {
        let (c, h, w) = input.dim();
        let (_, oh, ow) = grad_out.dim();
        let k = self.kernel;
        let input = input.as_standard_layout().into_owned();
        let go = grad_out
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.out_channels, oh * ow))
            .expect("gradient planes");
        let cols = self.im2col(&input, oh, ow);
        let gw = go.dot(&cols.t());
        for (dst, g) in grad_params[self.weight_range()].iter_mut().zip(gw.iter()) {
            *dst += g;
        }
        for (dst, row) in grad_params[self.bias..self.bias + self.out_channels]
            .iter_mut()
            .zip(go.outer_iter())
        {
            *dst += row.sum();
        }
        let gcols = self.weight_matrix(params).t().dot(&go);
        let mut grad_in = Array3::zeros((c, h, w));
        let gi = grad_in.as_slice_mut().expect("standard layout");
        for (r, row) in gcols.outer_iter().enumerate() {
            let (i, ky, kx) = (r / (k * k), (r / k) % k, r % k);
            for y in 0..oh {
                let iy = (y * self.stride + ky) as isize - self.padding as isize;
                if iy < 0 || iy as usize >= h {
                    continue;
                }
                let base = (i * h + iy as usize) * w;
                for x in 0..ow {
                    let ix = (x * self.stride + kx) as isize - self.padding as isize;
                    if ix >= 0 && (ix as usize) < w {
                        gi[base + ix as usize] += row[y * ow + x];
                    }
                }
            }
        }
        grad_in
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    weight: usize,
    bias: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = layout.push(format!("{name}.weight"), &[outputs, inputs]);
        let bias = layout.push(format!("{name}.bias"), &[outputs]);
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight..self.weight + self.inputs * self.outputs
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias..self.bias + self.outputs
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Array1<f64> {
        let w = &params[self.weight_range()];
        let b = &params[self.bias_range()];
        Array1::from_iter((0..self.outputs).map(|o| {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
        }))
    }

    pub fn backward(&self, params: &[f64], input: &[f64], grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        let w = &params[self.weight_range()];
        let mut grad_in = vec![0.0; self.inputs];
        for (o, &g) in grad_out.iter().enumerate() {
            grad_params[self.bias + o] += g;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grad_params[self.weight + row + i] += g * input[i];
                grad_in[i] += g * w[row + i];
            }
        }
        grad_in
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(size: usize) -> Self {
        Self::with_betas(size, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(size: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; size],
            v: vec![0.0; size],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer sized for another model");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
