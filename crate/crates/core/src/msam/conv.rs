//! Dilated same-padded 1-D convolution and the multi-scale attention head built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Kernel, Matrix};

fn check_conv(x: &Matrix, kernel: &Kernel, dilation: usize) -> Result<()> {
    if kernel.in_ch != x.rows {
        return Err(Error::Shape(format!(
            "kernel expects {} input channels, input has {}",
            kernel.in_ch, x.rows
        )));
    }
    if kernel.width % 2 == 0 {
        return Err(Error::Shape(format!(
            "kernel width must be odd, got {}",
            kernel.width
        )));
    }
    if dilation == 0 {
        return Err(Error::InvalidInput("dilation must be at least 1".into()));
    }
    Ok(())
}

/// Output positions `j` in `0..len` for which `j + offset` is in range.
#[inline]
fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = if offset < 0 {
        (-offset) as usize
    } else {
        0
    };
    let hi = if offset > 0 {
        len.saturating_sub(offset as usize)
    } else {
        len
    };
    (lo.min(len), hi.max(lo.min(len)))
}

/// `out[o, j] = sum_{c, tap} kernel[o, c, tap] * x[c, j + (tap - (k-1)/2) * dilation]`,
/// with out-of-range samples treated as zero. Output length equals input length.
pub fn dilated_conv1d(x: &Matrix, kernel: &Kernel, dilation: usize) -> Result<Matrix> {
    check_conv(x, kernel, dilation)?;
    let len = x.cols;
    let half = (kernel.width / 2) as isize;
    let mut out = Matrix::zeros(kernel.out_ch, len);
    for o in 0..kernel.out_ch {
        let out_row = &mut out.data[o * len..(o + 1) * len];
        for c in 0..kernel.in_ch {
            let x_row = x.row(c);
            for tap in 0..kernel.width {
                let w = kernel.get(o, c, tap);
                if w == 0.0 {
                    continue;
                }
                let offset = (tap as isize - half) * dilation as isize;
                let (lo, hi) = valid_range(len, offset);
                for j in lo..hi {
                    out_row[j] += w * x_row[(j as isize + offset) as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Reverse pass of [`dilated_conv1d`]: accumulates into `grad_kernel` and returns the input gradient.
pub(crate) fn dilated_conv1d_backward(
    x: &Matrix,
    kernel: &Kernel,
    dilation: usize,
    grad_out: &Matrix,
    grad_kernel: &mut Kernel,
) -> Matrix {
    let len = x.cols;
    let half = (kernel.width / 2) as isize;
    let mut grad_x = Matrix::zeros(x.rows, len);
    for o in 0..kernel.out_ch {
        let g_row = grad_out.row(o);
        for c in 0..kernel.in_ch {
            let x_row = x.row(c);
            for tap in 0..kernel.width {
                let offset = (tap as isize - half) * dilation as isize;
                let (lo, hi) = valid_range(len, offset);
                let w = kernel.get(o, c, tap);
                let mut acc = 0.0;
                let gx = grad_x.row_mut(c);
                for j in lo..hi {
                    let src = (j as isize + offset) as usize;
                    acc += g_row[j] * x_row[src];
                    gx[src] += w * g_row[j];
                }
                grad_kernel.data[(o * kernel.in_ch + c) * kernel.width + tap] += acc;
            }
        }
    }
    grad_x
}

/// Parameters of one multi-scale convolution attention head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsConvParams {
    pub dilations: Vec<usize>,
    /// One `[n, n, k]` bank per dilation.
    pub kernels: Vec<Kernel>,
    /// `[n, M*n]` per-position affine map back to `n` channels.
    pub mlp_weight: Matrix,
    pub mlp_bias: Vec<f64>,
}

impl MsConvParams {
    pub fn channels(&self) -> usize {
        self.mlp_bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dilations.len();
        if m == 0 || self.kernels.len() != m {
            return Err(Error::Shape(format!(
                "{} dilations but {} kernel banks",
                m,
                self.kernels.len()
            )));
        }
        if self.dilations[0] == 0 || self.dilations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Shape(format!(
                "dilations must be positive and strictly increasing, got {:?}",
                self.dilations
            )));
        }
        let n = self.channels();
        for k in &self.kernels {
            if k.out_ch != n || k.in_ch != n || k.width % 2 == 0 {
                return Err(Error::Shape(format!(
                    "kernel bank [{}, {}, {}] incompatible with {n} channels",
                    k.out_ch, k.in_ch, k.width
                )));
            }
        }
        if self.mlp_weight.rows != n || self.mlp_weight.cols != m * n {
            return Err(Error::Shape(format!(
                "mlp weight [{}, {}] should be [{n}, {}]",
                self.mlp_weight.rows,
                self.mlp_weight.cols,
                m * n
            )));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dilations: self.dilations.clone(),
            kernels: self
                .kernels
                .iter()
                .map(|k| Kernel::zeros(k.out_ch, k.in_ch, k.width))
                .collect(),
            mlp_weight: Matrix::zeros(self.mlp_weight.rows, self.mlp_weight.cols),
            mlp_bias: vec![0.0; self.mlp_bias.len()],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MsConvCache {
    pub input: Matrix,
    pub branch_outputs: Vec<Matrix>,
    pub attn: Matrix,
}

pub(crate) fn ms_conv_forward(x: &Matrix, p: &MsConvParams) -> Result<MsConvCache> {
    p.validate()?;
    let n = p.channels();
    if x.rows != n {
        return Err(Error::Shape(format!(
            "attention head built for {n} channels, input has {}",
            x.rows
        )));
    }
    let len = x.cols;
    let branch_outputs = p
        .kernels
        .iter()
        .zip(&p.dilations)
        .map(|(k, &d)| dilated_conv1d(x, k, d))
        .collect::<Result<Vec<_>>>()?;

    let mut attn = Matrix::zeros(n, len);
    for o in 0..n {
        let w_row = p.mlp_weight.row(o);
        let out = attn.row_mut(o);
        out.fill(p.mlp_bias[o]);
        for (b, branch) in branch_outputs.iter().enumerate() {
            for c in 0..n {
                let w = w_row[b * n + c];
                for (z, &y) in out.iter_mut().zip(branch.row(c)) {
                    *z += w * y;
                }
            }
        }
        for z in out.iter_mut() {
            *z = sigmoid(*z);
        }
    }
    Ok(MsConvCache {
        input: x.clone(),
        branch_outputs,
        attn,
    })
}

/// `sigmoid(MLP(concat_i conv_{r_i}(x)))`, one value per channel and position in `(0, 1)`.
pub fn ms_conv_attention(x: &Matrix, p: &MsConvParams) -> Result<Matrix> {
    Ok(ms_conv_forward(x, p)?.attn)
}

pub(crate) fn ms_conv_backward(
    cache: &MsConvCache,
    p: &MsConvParams,
    grad_attn: &Matrix,
    grads: &mut MsConvParams,
) -> Matrix {
    let n = p.channels();
    let len = cache.input.cols;
    let mut grad_z = Matrix::zeros(n, len);
    for (gz, (&ga, &a)) in grad_z
        .data
        .iter_mut()
        .zip(grad_attn.data.iter().zip(&cache.attn.data))
    {
        *gz = ga * a * (1.0 - a);
    }

    let m = p.kernels.len();
    let mut grad_branches: Vec<Matrix> = (0..m).map(|_| Matrix::zeros(n, len)).collect();
    for o in 0..n {
        let gz = grad_z.row(o);
        grads.mlp_bias[o] += gz.iter().sum::<f64>();
        for (b, branch) in cache.branch_outputs.iter().enumerate() {
            for c in 0..n {
                let col = b * n + c;
                let y = branch.row(c);
                let dw: f64 = gz.iter().zip(y).map(|(g, v)| g * v).sum();
                grads.mlp_weight.data[o * m * n + col] += dw;
                let w = p.mlp_weight.get(o, col);
                for (gb, &g) in grad_branches[b].row_mut(c).iter_mut().zip(gz) {
                    *gb += w * g;
                }
            }
        }
    }

    let mut grad_x = Matrix::zeros(n, len);
    for (b, gb) in grad_branches.iter().enumerate() {
        let gx = dilated_conv1d_backward(
            &cache.input,
            &p.kernels[b],
            p.dilations[b],
            gb,
            &mut grads.kernels[b],
        );
        for (acc, v) in grad_x.data.iter_mut().zip(gx.data) {
            *acc += v;
        }
    }
    grad_x
}
