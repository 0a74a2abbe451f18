//! Multi-axis attention aggregation over stacked encoder features.
//!
//! Three independent heads produce gates in `(0, 1)`:
//!
//! * temporal: mean over features, multi-scale dilated convolution along time;
//! * frequency: mean over time, the same structure along the feature axis with its own weights;
//! * channel: mean over features and time, self-attention across layers.
//!
//! The gates are broadcast-multiplied into one map `A[c, i, j]` and applied residually,
//! `out = h + A * h`. Heads can be switched off individually; a disabled head drops out
//! of the product, and with all three off the input passes through unchanged.

mod channel;
mod conv;

pub use channel::{channel_attention, ChannelAttnParams};
pub use conv::{dilated_conv1d, ms_conv_attention, MsConvParams};

use channel::{channel_backward, channel_forward, ChannelCache};
use conv::{ms_conv_backward, ms_conv_forward, MsConvCache};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{push_kernel, push_matrix, push_vec, Parameters, TensorStore};
use crate::tensor::{FeatureTensor, Kernel, Matrix};

/// Which attention heads are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationMask {
    pub temporal: bool,
    pub frequency: bool,
    pub channel: bool,
}

impl Default for AblationMask {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationMask {
    pub const FULL: Self = Self {
        temporal: true,
        frequency: true,
        channel: true,
    };
    pub const NONE: Self = Self {
        temporal: false,
        frequency: false,
        channel: false,
    };

    /// All eight combinations, baseline first, then singles, pairs and the full module.
    pub fn table_order() -> [Self; 8] {
        let m = |temporal, frequency, channel| Self {
            temporal,
            frequency,
            channel,
        };
        [
            m(false, false, false),
            m(true, false, false),
            m(false, true, false),
            m(false, false, true),
            m(true, true, false),
            m(true, false, true),
            m(false, true, true),
            m(true, true, true),
        ]
    }

    pub fn count(&self) -> usize {
        self.temporal as usize + self.frequency as usize + self.channel as usize
    }

    /// Parses `t,f,c` style lists; an empty string or `none` disables every head.
    pub fn parse(s: &str) -> Result<Self> {
        let mut mask = Self::NONE;
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(mask);
        }
        for part in s.split(',') {
            match part.trim().to_ascii_lowercase().as_str() {
                "t" | "temporal" => mask.temporal = true,
                "f" | "frequency" => mask.frequency = true,
                "c" | "channel" => mask.channel = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown ablation component {other:?} (expected t, f or c)"
                    )))
                }
            }
        }
        Ok(mask)
    }
}

impl std::fmt::Display for AblationMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if self.temporal {
            parts.push("t");
        }
        if self.frequency {
            parts.push("f");
        }
        if self.channel {
            parts.push("c");
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

/// Architecture hyper-parameters for the attention module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsamConfig {
    pub kernel_width: usize,
    pub dilations: Vec<usize>,
    pub channel_dim: usize,
    pub channel_kernel: usize,
}

impl Default for MsamConfig {
    fn default() -> Self {
        Self {
            kernel_width: 3,
            dilations: vec![1, 2, 4, 8],
            channel_dim: 16,
            channel_kernel: 3,
        }
    }
}

impl MsamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_width % 2 == 0 || self.channel_kernel % 2 == 0 {
            return Err(Error::Config("kernel widths must be odd".into()));
        }
        if self.dilations.is_empty()
            || self.dilations[0] == 0
            || self.dilations.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(format!(
                "dilations must be positive and strictly increasing, got {:?}",
                self.dilations
            )));
        }
        if self.channel_dim == 0 {
            return Err(Error::Config("channel_dim must be at least 1".into()));
        }
        Ok(())
    }
}

fn uniform_kernel(rng: &mut impl Rng, out_ch: usize, in_ch: usize, width: usize) -> Kernel {
    let a = 1.0 / ((in_ch * width) as f64).sqrt();
    Kernel {
        out_ch,
        in_ch,
        width,
        data: (0..out_ch * in_ch * width)
            .map(|_| rng.random_range(-a..a))
            .collect(),
    }
}

pub(crate) fn uniform_vec(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let a = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-a..a)).collect()
}

/// All learnables of the attention module. A `None` head is disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsamParams {
    pub temporal: Option<MsConvParams>,
    pub frequency: Option<MsConvParams>,
    pub channel: Option<ChannelAttnParams>,
}

impl MsamParams {
    pub fn init(channels: usize, cfg: &MsamConfig, mask: AblationMask, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(Error::Config("channel count must be positive".into()));
        }
        let ms_conv = |rng: &mut _| {
            let m = cfg.dilations.len();
            MsConvParams {
                dilations: cfg.dilations.clone(),
                kernels: (0..m)
                    .map(|_| uniform_kernel(rng, channels, channels, cfg.kernel_width))
                    .collect(),
                mlp_weight: Matrix {
                    rows: channels,
                    cols: m * channels,
                    data: uniform_vec(rng, channels * m * channels, m * channels),
                },
                mlp_bias: uniform_vec(rng, channels, m * channels),
            }
        };
        // draw every head so that masks do not shift the random stream of the others
        let temporal = ms_conv(rng);
        let frequency = ms_conv(rng);
        let d = cfg.channel_dim;
        let k = cfg.channel_kernel;
        let channel = ChannelAttnParams {
            proj_q: uniform_kernel(rng, d, 1, k),
            proj_k: uniform_kernel(rng, d, 1, k),
            proj_v: uniform_kernel(rng, d, 1, k),
            proj_out: uniform_kernel(rng, 1, d, k),
        };
        Ok(Self {
            temporal: mask.temporal.then_some(temporal),
            frequency: mask.frequency.then_some(frequency),
            channel: mask.channel.then_some(channel),
        })
    }

    pub fn mask(&self) -> AblationMask {
        AblationMask {
            temporal: self.temporal.is_some(),
            frequency: self.frequency.is_some(),
            channel: self.channel.is_some(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            temporal: self.temporal.as_ref().map(MsConvParams::zeros_like),
            frequency: self.frequency.as_ref().map(MsConvParams::zeros_like),
            channel: self.channel.as_ref().map(ChannelAttnParams::zeros_like),
        }
    }

    pub(crate) fn load(store: &mut TensorStore, prefix: &str) -> Result<Self> {
        let ms_conv = |store: &mut TensorStore, p: String| -> Result<Option<MsConvParams>> {
            if !store.contains_prefix(&p) {
                return Ok(None);
            }
            let dilations = store
                .take_vec(&format!("{p}.dilations"))?
                .into_iter()
                .map(|d| d as usize)
                .collect::<Vec<_>>();
            let kernels = (0..dilations.len())
                .map(|b| store.take_kernel(&format!("{p}.branch{b}")))
                .collect::<Result<Vec<_>>>()?;
            let params = MsConvParams {
                dilations,
                kernels,
                mlp_weight: store.take_matrix(&format!("{p}.mlp_weight"))?,
                mlp_bias: store.take_vec(&format!("{p}.mlp_bias"))?,
            };
            params.validate()?;
            Ok(Some(params))
        };
        let temporal = ms_conv(store, format!("{prefix}.temporal"))?;
        let frequency = ms_conv(store, format!("{prefix}.frequency"))?;
        let cp = format!("{prefix}.channel");
        let channel = if store.contains_prefix(&cp) {
            let params = ChannelAttnParams {
                proj_q: store.take_kernel(&format!("{cp}.proj_q"))?,
                proj_k: store.take_kernel(&format!("{cp}.proj_k"))?,
                proj_v: store.take_kernel(&format!("{cp}.proj_v"))?,
                proj_out: store.take_kernel(&format!("{cp}.proj_out"))?,
            };
            params.validate()?;
            Some(params)
        } else {
            None
        };
        Ok(Self {
            temporal,
            frequency,
            channel,
        })
    }

    /// Dilation lists are structural metadata; they are checkpointed but not trained.
    pub(crate) fn structural_tensors(&self, prefix: &str) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for (name, head) in [("temporal", &self.temporal), ("frequency", &self.frequency)] {
            if let Some(p) = head {
                out.push((
                    format!("{prefix}.{name}.dilations"),
                    vec![p.dilations.len()],
                    p.dilations.iter().map(|&d| d as f64).collect(),
                ));
            }
        }
        out
    }
}

impl Parameters for MsamParams {
    fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (name, head) in [("temporal", &self.temporal), ("frequency", &self.frequency)] {
            if let Some(p) = head {
                for (b, k) in p.kernels.iter().enumerate() {
                    push_kernel(&mut out, format!("msam.{name}.branch{b}"), k);
                }
                push_matrix(&mut out, format!("msam.{name}.mlp_weight"), &p.mlp_weight);
                push_vec(&mut out, format!("msam.{name}.mlp_bias"), &p.mlp_bias);
            }
        }
        if let Some(c) = &self.channel {
            push_kernel(&mut out, "msam.channel.proj_q".into(), &c.proj_q);
            push_kernel(&mut out, "msam.channel.proj_k".into(), &c.proj_k);
            push_kernel(&mut out, "msam.channel.proj_v".into(), &c.proj_v);
            push_kernel(&mut out, "msam.channel.proj_out".into(), &c.proj_out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for p in [self.temporal.as_mut(), self.frequency.as_mut()].into_iter().flatten() {
            for k in p.kernels.iter_mut() {
                out.push(&mut k.data);
            }
            out.push(&mut p.mlp_weight.data);
            out.push(&mut p.mlp_bias);
        }
        if let Some(c) = self.channel.as_mut() {
            out.push(&mut c.proj_q.data);
            out.push(&mut c.proj_k.data);
            out.push(&mut c.proj_v.data);
            out.push(&mut c.proj_out.data);
        }
        out
    }
}

/// Mean over the feature axis: `[n, t]`.
pub fn t_avg_pool(h: &FeatureTensor) -> Matrix {
    let (n, f, t) = (h.n(), h.f(), h.t());
    let mut out = Matrix::zeros(n, t);
    for c in 0..n {
        let acc = out.row_mut(c);
        for i in 0..f {
            let row = &h.data()[(c * f + i) * t..(c * f + i + 1) * t];
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a /= f as f64;
        }
    }
    out
}

/// Mean over the time axis: `[n, f]`.
pub fn f_avg_pool(h: &FeatureTensor) -> Matrix {
    let (n, f, t) = (h.n(), h.f(), h.t());
    let data = h
        .data()
        .chunks_exact(t)
        .map(|row| row.iter().sum::<f64>() / t as f64)
        .collect();
    Matrix {
        rows: n,
        cols: f,
        data,
    }
}

/// Mean over features and time: one value per channel.
pub fn c_avg_pool(h: &FeatureTensor) -> Vec<f64> {
    let per = h.f() * h.t();
    h.data()
        .chunks_exact(per)
        .map(|block| block.iter().sum::<f64>() / per as f64)
        .collect()
}

/// Attention maps produced by a forward pass. Disabled heads are `None`; `fused` is `None`
/// only when every head is disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub attn_t: Option<Matrix>,
    pub attn_f: Option<Matrix>,
    pub attn_c: Option<Vec<f64>>,
    /// `[n, f, t]` row-major.
    pub fused: Option<Vec<f64>>,
}

fn fuse_factors(
    n: usize,
    f: usize,
    t: usize,
    attn_t: Option<&Matrix>,
    attn_f: Option<&Matrix>,
    attn_c: Option<&[f64]>,
) -> Option<Vec<f64>> {
    if attn_t.is_none() && attn_f.is_none() && attn_c.is_none() {
        return None;
    }
    let mut fused = vec![0.0; n * f * t];
    for c in 0..n {
        let gc = attn_c.map_or(1.0, |a| a[c]);
        for i in 0..f {
            let gf = attn_f.map_or(1.0, |a| a.get(c, i));
            let row = &mut fused[(c * f + i) * t..(c * f + i + 1) * t];
            match attn_t {
                Some(a) => {
                    for (out, &g) in row.iter_mut().zip(a.row(c)) {
                        *out = g * gf * gc;
                    }
                }
                None => row.fill(gf * gc),
            }
        }
    }
    Some(fused)
}

/// `fused[c, i, j] = attn_t[c, j] * attn_f[c, i] * attn_c[c]`.
pub fn fuse_attention(attn_t: &Matrix, attn_f: &Matrix, attn_c: &[f64]) -> Result<Vec<f64>> {
    let n = attn_c.len();
    if attn_t.rows != n || attn_f.rows != n {
        return Err(Error::Shape(format!(
            "channel counts differ: temporal {}, frequency {}, channel {n}",
            attn_t.rows, attn_f.rows
        )));
    }
    Ok(fuse_factors(n, attn_f.cols, attn_t.cols, Some(attn_t), Some(attn_f), Some(attn_c))
        .expect("all factors present"))
}

/// Residual gating `h + fused * h`.
pub fn apply_attention(h: &FeatureTensor, fused: &[f64]) -> Result<FeatureTensor> {
    if fused.len() != h.data().len() {
        return Err(Error::Shape(format!(
            "attention map has {} values, features have {}",
            fused.len(),
            h.data().len()
        )));
    }
    let data = h
        .data()
        .iter()
        .zip(fused)
        .map(|(x, a)| x + a * x)
        .collect();
    FeatureTensor::new(h.n(), h.f(), h.t(), data, h.frame_rate_hz())
}

/// Intermediates retained by [`msam_forward`] for [`msam_backward`].
#[derive(Debug, Clone)]
pub struct MsamCache {
    shape: [usize; 3],
    mask: AblationMask,
    input: Vec<f64>,
    temporal: Option<MsConvCache>,
    frequency: Option<MsConvCache>,
    channel: Option<ChannelCache>,
    fused: Option<Vec<f64>>,
}

impl MsamCache {
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }
}

fn check_channels(h: &FeatureTensor, p: &MsamParams) -> Result<()> {
    let n = h.n();
    for head in [&p.temporal, &p.frequency].into_iter().flatten() {
        if head.channels() != n {
            return Err(Error::Shape(format!(
                "attention head built for {} channels, features have {n}",
                head.channels()
            )));
        }
    }
    Ok(())
}

pub fn msam_forward(h: &FeatureTensor, p: &MsamParams) -> Result<(FeatureTensor, AttentionMaps, MsamCache)> {
    check_channels(h, p)?;
    let [n, f, t] = h.shape();
    let temporal = p
        .temporal
        .as_ref()
        .map(|tp| ms_conv_forward(&t_avg_pool(h), tp))
        .transpose()?;
    let frequency = p
        .frequency
        .as_ref()
        .map(|fp| ms_conv_forward(&f_avg_pool(h), fp))
        .transpose()?;
    let channel = p
        .channel
        .as_ref()
        .map(|cp| channel_forward(&c_avg_pool(h), cp))
        .transpose()?;

    let fused = fuse_factors(
        n,
        f,
        t,
        temporal.as_ref().map(|c| &c.attn),
        frequency.as_ref().map(|c| &c.attn),
        channel.as_ref().map(|c| c.attn.as_slice()),
    );
    let out = match &fused {
        Some(a) => apply_attention(h, a)?,
        None => h.clone(),
    };
    let maps = AttentionMaps {
        attn_t: temporal.as_ref().map(|c| c.attn.clone()),
        attn_f: frequency.as_ref().map(|c| c.attn.clone()),
        attn_c: channel.as_ref().map(|c| c.attn.clone()),
        fused: fused.clone(),
    };
    let cache = MsamCache {
        shape: [n, f, t],
        mask: p.mask(),
        input: h.data().to_vec(),
        temporal,
        frequency,
        channel,
        fused,
    };
    Ok((out, maps, cache))
}

/// Exact reverse-mode gradients of [`msam_forward`] with respect to its input and every parameter.
pub fn msam_backward(cache: &MsamCache, p: &MsamParams, grad_out: &[f64]) -> Result<(Vec<f64>, MsamParams)> {
    let [n, f, t] = cache.shape;
    if grad_out.len() != n * f * t {
        return Err(Error::Shape(format!(
            "output gradient has {} values, cache expects {}",
            grad_out.len(),
            n * f * t
        )));
    }
    if cache.mask != p.mask() {
        return Err(Error::InvalidInput(format!(
            "cache was recorded with heads {} but parameters have {}",
            cache.mask,
            p.mask()
        )));
    }
    for head in [&p.temporal, &p.frequency].into_iter().flatten() {
        if head.channels() != n {
            return Err(Error::Shape("cache does not match parameter dimensions".into()));
        }
    }

    let mut grads = p.zeros_like();
    let Some(fused) = &cache.fused else {
        return Ok((grad_out.to_vec(), grads));
    };

    let h = &cache.input;
    let mut grad_h: Vec<f64> = grad_out.iter().zip(fused).map(|(g, a)| g * (1.0 + a)).collect();
    let grad_fused: Vec<f64> = grad_out.iter().zip(h).map(|(g, x)| g * x).collect();

    let at = cache.temporal.as_ref().map(|c| &c.attn);
    let af = cache.frequency.as_ref().map(|c| &c.attn);
    let ac = cache.channel.as_ref().map(|c| c.attn.as_slice());

    let mut g_t = Matrix::zeros(n, t);
    let mut g_f = Matrix::zeros(n, f);
    let mut g_c = vec![0.0; n];
    for c in 0..n {
        let gc = ac.map_or(1.0, |a| a[c]);
        for i in 0..f {
            let gf = af.map_or(1.0, |a| a.get(c, i));
            let base = (c * f + i) * t;
            let row = &grad_fused[base..base + t];
            let mut sum_f = 0.0;
            let mut sum_c = 0.0;
            for (j, &d) in row.iter().enumerate() {
                let gt = at.map_or(1.0, |a| a.get(c, j));
                g_t.data[c * t + j] += d * gf * gc;
                sum_f += d * gt;
                sum_c += d * gt * gf;
            }
            g_f.data[c * f + i] += sum_f * gc;
            g_c[c] += sum_c;
        }
    }

    if let (Some(tc), Some(tp), Some(tg)) = (&cache.temporal, &p.temporal, grads.temporal.as_mut()) {
        let gx = ms_conv_backward(tc, tp, &g_t, tg);
        let scale = 1.0 / f as f64;
        for c in 0..n {
            for i in 0..f {
                let base = (c * f + i) * t;
                for (j, g) in grad_h[base..base + t].iter_mut().enumerate() {
                    *g += gx.get(c, j) * scale;
                }
            }
        }
    }
    if let (Some(fc), Some(fp), Some(fg)) = (&cache.frequency, &p.frequency, grads.frequency.as_mut()) {
        let gx = ms_conv_backward(fc, fp, &g_f, fg);
        let scale = 1.0 / t as f64;
        for c in 0..n {
            for i in 0..f {
                let add = gx.get(c, i) * scale;
                let base = (c * f + i) * t;
                for g in &mut grad_h[base..base + t] {
                    *g += add;
                }
            }
        }
    }
    if let (Some(cc), Some(cp), Some(cg)) = (&cache.channel, &p.channel, grads.channel.as_mut()) {
        let gx = channel_backward(cc, cp, &g_c, cg);
        let scale = 1.0 / (f * t) as f64;
        for (c, block) in grad_h.chunks_exact_mut(f * t).enumerate() {
            let add = gx[c] * scale;
            for g in block {
                *g += add;
            }
        }
    }
    Ok((grad_h, grads))
}
