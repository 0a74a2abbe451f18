//! Self-attention across encoder layers, each layer pooled to a single scalar token.

use serde::{Deserialize, Serialize};

use super::conv::{dilated_conv1d, dilated_conv1d_backward};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Kernel, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAttnParams {
    /// `[d_c, 1, k_c]` lifts over the channel axis.
    pub proj_q: Kernel,
    pub proj_k: Kernel,
    pub proj_v: Kernel,
    /// `[1, d_c, k_c]` projection back to one logit per channel.
    pub proj_out: Kernel,
}

impl ChannelAttnParams {
    pub fn embed_dim(&self) -> usize {
        self.proj_q.out_ch
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.embed_dim();
        if d == 0 {
            return Err(Error::Shape("channel attention needs d_c >= 1".into()));
        }
        for k in [&self.proj_q, &self.proj_k, &self.proj_v] {
            if k.out_ch != d || k.in_ch != 1 || k.width % 2 == 0 {
                return Err(Error::Shape(format!(
                    "projection [{}, {}, {}] should be [{d}, 1, odd]",
                    k.out_ch, k.in_ch, k.width
                )));
            }
        }
        let o = &self.proj_out;
        if o.out_ch != 1 || o.in_ch != d || o.width % 2 == 0 {
            return Err(Error::Shape(format!(
                "output projection [{}, {}, {}] should be [1, {d}, odd]",
                o.out_ch, o.in_ch, o.width
            )));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let z = |k: &Kernel| Kernel::zeros(k.out_ch, k.in_ch, k.width);
        Self {
            proj_q: z(&self.proj_q),
            proj_k: z(&self.proj_k),
            proj_v: z(&self.proj_v),
            proj_out: z(&self.proj_out),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ChannelCache {
    pub input: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Row-softmax weights `[n, n]`.
    pub weights: Matrix,
    /// Attended values `[d_c, n]`.
    pub mixed: Matrix,
    pub attn: Vec<f64>,
}

pub(crate) fn channel_forward(h_c: &[f64], p: &ChannelAttnParams) -> Result<ChannelCache> {
    p.validate()?;
    let n = h_c.len();
    if n == 0 {
        return Err(Error::Shape("channel attention needs at least one channel".into()));
    }
    let d = p.embed_dim();
    let scale = (d as f64).sqrt();
    let input = Matrix::from_vec(1, n, h_c.to_vec())?;
    // embeddings are stored transposed: [d_c, n]
    let q = dilated_conv1d(&input, &p.proj_q, 1)?;
    let k = dilated_conv1d(&input, &p.proj_k, 1)?;
    let v = dilated_conv1d(&input, &p.proj_v, 1)?;

    let mut weights = Matrix::zeros(n, n);
    for a in 0..n {
        let row = weights.row_mut(a);
        for (b, s) in row.iter_mut().enumerate() {
            *s = (0..d).map(|e| q.get(e, a) * k.get(e, b)).sum::<f64>() / scale;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        for s in row.iter_mut() {
            *s /= total;
        }
    }

    let mut mixed = Matrix::zeros(d, n);
    for e in 0..d {
        for a in 0..n {
            let val: f64 = weights.row(a).iter().zip(v.row(e)).map(|(w, x)| w * x).sum();
            mixed.set(e, a, val);
        }
    }

    let logits = dilated_conv1d(&mixed, &p.proj_out, 1)?;
    let attn = logits.data.iter().map(|&z| sigmoid(z)).collect();
    Ok(ChannelCache {
        input,
        q,
        k,
        v,
        weights,
        mixed,
        attn,
    })
}

/// Per-channel weight in `(0, 1)` from scaled dot-product attention over the pooled channel vector.
pub fn channel_attention(h_c: &[f64], p: &ChannelAttnParams) -> Result<Vec<f64>> {
    Ok(channel_forward(h_c, p)?.attn)
}

/// Returns the gradient with respect to the pooled channel vector.
pub(crate) fn channel_backward(
    cache: &ChannelCache,
    p: &ChannelAttnParams,
    grad_attn: &[f64],
    grads: &mut ChannelAttnParams,
) -> Vec<f64> {
    let n = cache.attn.len();
    let d = p.embed_dim();
    let scale = (d as f64).sqrt();

    let grad_logits = Matrix {
        rows: 1,
        cols: n,
        data: grad_attn
            .iter()
            .zip(&cache.attn)
            .map(|(g, a)| g * a * (1.0 - a))
            .collect(),
    };
    let grad_mixed =
        dilated_conv1d_backward(&cache.mixed, &p.proj_out, 1, &grad_logits, &mut grads.proj_out);

    let mut grad_weights = Matrix::zeros(n, n);
    let mut grad_v = Matrix::zeros(d, n);
    for a in 0..n {
        for b in 0..n {
            let w = cache.weights.get(a, b);
            let mut gw = 0.0;
            for e in 0..d {
                let gm = grad_mixed.get(e, a);
                gw += gm * cache.v.get(e, b);
                grad_v.data[e * n + b] += w * gm;
            }
            grad_weights.set(a, b, gw);
        }
    }

    let mut grad_scores = Matrix::zeros(n, n);
    for a in 0..n {
        let w = cache.weights.row(a);
        let gw = grad_weights.row(a);
        let dot: f64 = w.iter().zip(gw).map(|(x, y)| x * y).sum();
        for b in 0..n {
            grad_scores.set(a, b, w[b] * (gw[b] - dot));
        }
    }

    let mut grad_q = Matrix::zeros(d, n);
    let mut grad_k = Matrix::zeros(d, n);
    for a in 0..n {
        for b in 0..n {
            let gs = grad_scores.get(a, b) / scale;
            for e in 0..d {
                grad_q.data[e * n + a] += gs * cache.k.get(e, b);
                grad_k.data[e * n + b] += gs * cache.q.get(e, a);
            }
        }
    }

    let mut grad_input = vec![0.0; n];
    for (proj, grad_proj, g) in [
        (&p.proj_q, &mut grads.proj_q, &grad_q),
        (&p.proj_k, &mut grads.proj_k, &grad_k),
        (&p.proj_v, &mut grads.proj_v, &grad_v),
    ] {
        let gx = dilated_conv1d_backward(&cache.input, proj, 1, g, grad_proj);
        for (acc, v) in grad_input.iter_mut().zip(gx.data) {
            *acc += v;
        }
    }
    grad_input
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize, k: usize, fill: impl Fn(usize) -> f64) -> ChannelAttnParams {
        let mk = |o, i, seed: usize| {
            Kernel::from_vec(o, i, k, (0..o * i * k).map(|x| fill(x + seed)).collect()).unwrap()
        };
        ChannelAttnParams {
            proj_q: mk(d, 1, 0),
            proj_k: mk(d, 1, 100),
            proj_v: mk(d, 1, 200),
            proj_out: mk(1, d, 300),
        }
    }

    #[test]
    fn zero_projections_give_one_half() {
        let p = params(16, 3, |_| 0.0);
        let out = channel_attention(&[1.0, -2.0, 3.0, 0.5], &p).unwrap();
        assert_eq!(out, vec![0.5; 4]);
    }

    #[test]
    fn single_token_attends_to_itself() {
        let p = params(3, 3, |x| ((x * 7) % 5) as f64 * 0.3 - 0.6);
        let h = 1.7;
        let out = channel_attention(&[h], &p).unwrap();
        // softmax over one token is 1, so the output is sigma(proj_out(v_0)) using centre taps only
        let v: Vec<f64> = (0..3).map(|e| p.proj_v.get(e, 0, 1) * h).collect();
        let logit: f64 = (0..3).map(|e| p.proj_out.get(0, e, 1) * v[e]).sum();
        assert!((out[0] - sigmoid(logit)).abs() < 1e-15);
    }

    #[test]
    fn two_tokens_unit_projections_closed_form() {
        // d_c = 1, k_c = 1: q = k = v = h, scores = h_a * h_b
        let p = params(1, 1, |_| 1.0);
        let (x0, x1) = (0.8_f64, -0.3_f64);
        let out = channel_attention(&[x0, x1], &p).unwrap();
        let mix = |xa: f64| {
            let (s0, s1) = (xa * x0, xa * x1);
            let (e0, e1) = (s0.exp(), s1.exp());
            (e0 * x0 + e1 * x1) / (e0 + e1)
        };
        assert!((out[0] - sigmoid(mix(x0))).abs() < 1e-15);
        assert!((out[1] - sigmoid(mix(x1))).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = params(4, 3, |x| ((x * 13) % 11) as f64 * 0.2 - 1.0);
        let cache = channel_forward(&[0.3, -1.2, 2.2, 0.0, 0.9], &p).unwrap();
        for a in 0..5 {
            let s: f64 = cache.weights.row(a).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(cache.attn.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn mismatched_projection_shapes_are_rejected() {
        let mut p = params(4, 3, |_| 0.1);
        p.proj_out = Kernel::zeros(1, 3, 3);
        assert!(matches!(channel_attention(&[1.0, 2.0], &p), Err(Error::Shape(_))));
    }
}
