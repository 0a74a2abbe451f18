//! Dense f64 containers used throughout the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stacked encoder-layer features `[n channels, f features, t frames]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    n: usize,
    f: usize,
    t: usize,
    data: Vec<f64>,
    frame_rate_hz: f64,
}

impl FeatureTensor {
    pub fn new(n: usize, f: usize, t: usize, data: Vec<f64>, frame_rate_hz: f64) -> Result<Self> {
        if n == 0 || f == 0 || t == 0 {
            return Err(Error::Shape(format!(
                "feature tensor dims must be positive, got [{n}, {f}, {t}]"
            )));
        }
        if data.len() != n * f * t {
            return Err(Error::Shape(format!(
                "feature tensor [{n}, {f}, {t}] needs {} values, got {}",
                n * f * t,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature value at flat index {pos}"
            )));
        }
        if !(frame_rate_hz > 0.0 && frame_rate_hz.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        Ok(Self {
            n,
            f,
            t,
            data,
            frame_rate_hz,
        })
    }

    pub fn zeros(n: usize, f: usize, t: usize, frame_rate_hz: f64) -> Result<Self> {
        Self::new(n, f, t, vec![0.0; n * f * t], frame_rate_hz)
    }

    pub fn from_fn(
        n: usize,
        f: usize,
        t: usize,
        frame_rate_hz: f64,
        mut value: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(n * f * t);
        for c in 0..n {
            for i in 0..f {
                for j in 0..t {
                    data.push(value(c, i, j));
                }
            }
        }
        Self::new(n, f, t, data, frame_rate_hz)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n, self.f, self.t]
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.f + i) * self.t + j]
    }

    /// Frames `[start, end)` as a new tensor.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.t {
            return Err(Error::Shape(format!(
                "frame range {start}..{end} outside 0..{}",
                self.t
            )));
        }
        let len = end - start;
        let mut data = Vec::with_capacity(self.n * self.f * len);
        for row in self.data.chunks_exact(self.t) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(Self {
            n: self.n,
            f: self.f,
            t: len,
            data,
            frame_rate_hz: self.frame_rate_hz,
        })
    }
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix [{rows}, {cols}] needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Convolution kernel `[out, in, width]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub out_ch: usize,
    pub in_ch: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn zeros(out_ch: usize, in_ch: usize, width: usize) -> Self {
        Self {
            out_ch,
            in_ch,
            width,
            data: vec![0.0; out_ch * in_ch * width],
        }
    }

    pub fn from_vec(out_ch: usize, in_ch: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out_ch * in_ch * width {
            return Err(Error::Shape(format!(
                "kernel [{out_ch}, {in_ch}, {width}] needs {} values, got {}",
                out_ch * in_ch * width,
                data.len()
            )));
        }
        Ok(Self {
            out_ch,
            in_ch,
            width,
            data,
        })
    }

    /// Centre tap set to the identity, all other taps zero.
    pub fn identity(channels: usize, width: usize) -> Self {
        let mut k = Self::zeros(channels, channels, width);
        for c in 0..channels {
            k.data[(c * channels + c) * width + width / 2] = 1.0;
        }
        k
    }

    #[inline]
    pub fn get(&self, o: usize, c: usize, tap: usize) -> f64 {
        self.data[(o * self.in_ch + c) * self.width + tap]
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
