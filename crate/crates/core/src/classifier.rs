//! Per-frame beat and downbeat heads, widened training targets and the joint BCE loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msam::uniform_vec;
use crate::params::{push_matrix, push_vec, Parameters, TensorStore};
use crate::tensor::{sigmoid, FeatureTensor, Matrix};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;

/// Target values for annotated frames and their first and second neighbours.
pub const WIDEN_WEIGHTS: [f64; 3] = [1.0, 0.5, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// `[d_h, n*f]`
    pub w_shared: Matrix,
    pub b_shared: Vec<f64>,
    pub w_beat: Vec<f64>,
    pub b_beat: f64,
    pub w_down: Vec<f64>,
    pub b_down: f64,
}

impl ClassifierParams {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Config(format!(
                "classifier dims must be positive, got input {input_dim}, hidden {hidden}"
            )));
        }
        let w_shared = Matrix {
            rows: hidden,
            cols: input_dim,
            data: uniform_vec(rng, hidden * input_dim, input_dim),
        };
        let b_shared = uniform_vec(rng, hidden, input_dim);
        let w_beat = uniform_vec(rng, hidden, hidden);
        let b_beat = uniform_vec(rng, 1, hidden)[0];
        let w_down = uniform_vec(rng, hidden, hidden);
        let b_down = uniform_vec(rng, 1, hidden)[0];
        Ok(Self {
            w_shared,
            b_shared,
            w_beat,
            b_beat,
            w_down,
            b_down,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w_shared.rows
    }

    pub fn input_dim(&self) -> usize {
        self.w_shared.cols
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_shared: Matrix::zeros(self.w_shared.rows, self.w_shared.cols),
            b_shared: vec![0.0; self.b_shared.len()],
            w_beat: vec![0.0; self.w_beat.len()],
            b_beat: 0.0,
            w_down: vec![0.0; self.w_down.len()],
            b_down: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.hidden();
        if d == 0 || self.b_shared.len() != d || self.w_beat.len() != d || self.w_down.len() != d {
            return Err(Error::Shape(format!(
                "classifier hidden width {d} inconsistent with bias/head sizes"
            )));
        }
        Ok(())
    }

    pub(crate) fn load(store: &mut TensorStore) -> Result<Self> {
        let p = Self {
            w_shared: store.take_matrix("classifier.w_shared")?,
            b_shared: store.take_vec("classifier.b_shared")?,
            w_beat: store.take_vec("classifier.w_beat")?,
            b_beat: store.take_scalar("classifier.b_beat")?,
            w_down: store.take_vec("classifier.w_down")?,
            b_down: store.take_scalar("classifier.b_down")?,
        };
        p.validate()?;
        Ok(p)
    }
}

impl Parameters for ClassifierParams {
    fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        push_matrix(&mut out, "classifier.w_shared".into(), &self.w_shared);
        push_vec(&mut out, "classifier.b_shared".into(), &self.b_shared);
        push_vec(&mut out, "classifier.w_beat".into(), &self.w_beat);
        push_vec(&mut out, "classifier.b_beat".into(), std::slice::from_ref(&self.b_beat));
        push_vec(&mut out, "classifier.w_down".into(), &self.w_down);
        push_vec(&mut out, "classifier.b_down".into(), std::slice::from_ref(&self.b_down));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.w_shared.data,
            &mut self.b_shared,
            &mut self.w_beat,
            std::slice::from_mut(&mut self.b_beat),
            &mut self.w_down,
            std::slice::from_mut(&mut self.b_down),
        ]
    }
}

/// Per-frame beat and downbeat probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationCurves {
    pub beat: Vec<f64>,
    pub downbeat: Vec<f64>,
    pub frame_rate_hz: f64,
}

impl ActivationCurves {
    pub fn new(beat: Vec<f64>, downbeat: Vec<f64>, frame_rate_hz: f64) -> Result<Self> {
        if beat.len() != downbeat.len() {
            return Err(Error::Shape(format!(
                "beat curve has {} frames, downbeat curve {}",
                beat.len(),
                downbeat.len()
            )));
        }
        if !(frame_rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!("frame rate must be positive, got {frame_rate_hz}")));
        }
        if beat.iter().chain(&downbeat).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("activations must lie in [0, 1]".into()));
        }
        Ok(Self {
            beat,
            downbeat,
            frame_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.beat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beat.is_empty()
    }
}

/// Soft training targets for both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    pub beat: Vec<f64>,
    pub downbeat: Vec<f64>,
}

impl FrameTargets {
    pub fn new(beat: Vec<f64>, downbeat: Vec<f64>) -> Result<Self> {
        if beat.len() != downbeat.len() {
            return Err(Error::Shape("target curves differ in length".into()));
        }
        if beat.iter().chain(&downbeat).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("targets must lie in [0, 1]".into()));
        }
        Ok(Self { beat, downbeat })
    }

    pub fn from_frames(beat_frames: &[usize], downbeat_frames: &[usize], t: usize) -> Result<Self> {
        Ok(Self {
            beat: widen_labels(beat_frames, t)?,
            downbeat: widen_labels(downbeat_frames, t)?,
        })
    }

    pub fn len(&self) -> usize {
        self.beat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beat.is_empty()
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            beat: self.beat[start..end].to_vec(),
            downbeat: self.downbeat[start..end].to_vec(),
        }
    }
}

/// Target curve with 1.0 on annotated frames, 0.5 one frame away and 0.25 two frames away.
/// Overlapping neighbourhoods keep the larger value.
pub fn widen_labels(beat_frames: &[usize], t: usize) -> Result<Vec<f64>> {
    if let Some(i) = beat_frames.windows(2).position(|w| w[0] > w[1]) {
        return Err(Error::Unsorted { index: i + 1 });
    }
    if let Some(&bad) = beat_frames.iter().find(|&&k| k >= t) {
        return Err(Error::InvalidInput(format!(
            "annotated frame {bad} outside 0..{t}"
        )));
    }
    let mut target = vec![0.0; t];
    for &k in beat_frames {
        for (dist, &w) in WIDEN_WEIGHTS.iter().enumerate() {
            for idx in [k.checked_sub(dist), k.checked_add(dist)].into_iter().flatten() {
                if idx < t && target[idx] < w {
                    target[idx] = w;
                }
            }
        }
    }
    Ok(target)
}

/// Loss gradients with respect to the pre-sigmoid logits of each head.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrads {
    pub beat: Vec<f64>,
    pub downbeat: Vec<f64>,
}

fn bce_head(p: &[f64], y: &[f64], grads: &mut [f64]) -> f64 {
    let t = p.len() as f64;
    let mut loss = 0.0;
    for ((&p, &y), g) in p.iter().zip(y).zip(grads.iter_mut()) {
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        *g = if p > BCE_EPS && p < 1.0 - BCE_EPS {
            (p - y) / t
        } else {
            0.0
        };
    }
    loss / t
}

/// Mean binary cross-entropy per head, summed over the two heads.
pub fn bce_loss(curves: &ActivationCurves, targets: &FrameTargets) -> Result<(f64, LogitGrads)> {
    let t = curves.len();
    if targets.len() != t || curves.downbeat.len() != t || targets.downbeat.len() != t {
        return Err(Error::Shape(format!(
            "predictions cover {t} frames, targets {}",
            targets.len()
        )));
    }
    if t == 0 {
        return Err(Error::InvalidInput("loss over zero frames".into()));
    }
    let mut grads = LogitGrads {
        beat: vec![0.0; t],
        downbeat: vec![0.0; t],
    };
    let loss = bce_head(&curves.beat, &targets.beat, &mut grads.beat)
        + bce_head(&curves.downbeat, &targets.downbeat, &mut grads.downbeat);
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct ClassifierCache {
    shape: [usize; 3],
    /// Frame-major input `[t, n*f]`.
    frames: Vec<f64>,
    /// Hidden activations after ReLU `[t, d_h]`.
    hidden: Vec<f64>,
}

fn frame_major(h: &FeatureTensor) -> Vec<f64> {
    let [n, f, t] = h.shape();
    let width = n * f;
    let mut frames = vec![0.0; t * width];
    for (m, row) in h.data().chunks_exact(t).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            frames[j * width + m] = v;
        }
    }
    frames
}

fn transpose(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.rows * m.cols];
    for r in 0..m.rows {
        for (c, &v) in m.row(r).iter().enumerate() {
            out[c * m.rows + r] = v;
        }
    }
    out
}

pub fn classify_forward(h: &FeatureTensor, p: &ClassifierParams) -> Result<(ActivationCurves, ClassifierCache)> {
    p.validate()?;
    let [n, f, t] = h.shape();
    let width = n * f;
    if width != p.input_dim() {
        return Err(Error::Shape(format!(
            "classifier expects {} inputs per frame, features give {width}",
            p.input_dim()
        )));
    }
    let d = p.hidden();
    let frames = frame_major(h);
    let w_t = transpose(&p.w_shared);
    let mut hidden = vec![0.0; t * d];
    let mut beat = Vec::with_capacity(t);
    let mut downbeat = Vec::with_capacity(t);
    for j in 0..t {
        let z = &mut hidden[j * d..(j + 1) * d];
        z.copy_from_slice(&p.b_shared);
        for (m, &x) in frames[j * width..(j + 1) * width].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (acc, &w) in z.iter_mut().zip(&w_t[m * d..(m + 1) * d]) {
                *acc += w * x;
            }
        }
        let mut lb = p.b_beat;
        let mut ld = p.b_down;
        for ((v, wb), wd) in z.iter_mut().zip(&p.w_beat).zip(&p.w_down) {
            if *v < 0.0 {
                *v = 0.0;
            }
            lb += wb * *v;
            ld += wd * *v;
        }
        beat.push(sigmoid(lb));
        downbeat.push(sigmoid(ld));
    }
    let curves = ActivationCurves {
        beat,
        downbeat,
        frame_rate_hz: h.frame_rate_hz(),
    };
    Ok((
        curves,
        ClassifierCache {
            shape: [n, f, t],
            frames,
            hidden,
        },
    ))
}

/// `beat[j] = sigma(w_beat . relu(W x_j + b) + b_beat)`, likewise for downbeats,
/// where `x_j` stacks every channel and feature of frame `j`.
pub fn classify(h: &FeatureTensor, p: &ClassifierParams) -> Result<ActivationCurves> {
    Ok(classify_forward(h, p)?.0)
}

/// Returns the input gradient in `[n, f, t]` layout when `input_grad` is set.
pub fn classifier_backward(
    cache: &ClassifierCache,
    p: &ClassifierParams,
    logit_grads: &LogitGrads,
    input_grad: bool,
) -> Result<(Option<Vec<f64>>, ClassifierParams)> {
    let [n, f, t] = cache.shape;
    if logit_grads.beat.len() != t || logit_grads.downbeat.len() != t {
        return Err(Error::Shape("logit gradients do not match cached frames".into()));
    }
    if p.input_dim() != n * f || cache.hidden.len() != t * p.hidden() {
        return Err(Error::Shape("classifier cache does not match parameters".into()));
    }
    let width = n * f;
    let d = p.hidden();
    let mut g = p.zeros_like();
    let mut grad_frames = if input_grad { vec![0.0; t * width] } else { Vec::new() };
    let mut grad_pre = vec![0.0; d];
    for j in 0..t {
        let gb = logit_grads.beat[j];
        let gd = logit_grads.downbeat[j];
        if gb == 0.0 && gd == 0.0 {
            continue;
        }
        let z = &cache.hidden[j * d..(j + 1) * d];
        g.b_beat += gb;
        g.b_down += gd;
        for k in 0..d {
            g.w_beat[k] += gb * z[k];
            g.w_down[k] += gd * z[k];
            grad_pre[k] = if z[k] > 0.0 {
                gb * p.w_beat[k] + gd * p.w_down[k]
            } else {
                0.0
            };
        }
        let x = &cache.frames[j * width..(j + 1) * width];
        for k in 0..d {
            let gk = grad_pre[k];
            if gk == 0.0 {
                continue;
            }
            g.b_shared[k] += gk;
            for (acc, &xv) in g.w_shared.row_mut(k).iter_mut().zip(x) {
                *acc += gk * xv;
            }
            if input_grad {
                let gx = &mut grad_frames[j * width..(j + 1) * width];
                for (acc, &w) in gx.iter_mut().zip(p.w_shared.row(k)) {
                    *acc += gk * w;
                }
            }
        }
    }
    let grad_h = input_grad.then(|| {
        let mut out = vec![0.0; n * f * t];
        for j in 0..t {
            for m in 0..width {
                out[m * t + j] = grad_frames[j * width + m];
            }
        }
        out
    });
    Ok((grad_h, g))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn widen_single_beat() {
        let t = widen_labels(&[5], 11).unwrap();
        assert_eq!(t, vec![0.0, 0.0, 0.0, 0.25, 0.5, 1.0, 0.5, 0.25, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn widen_empty_and_edges() {
        assert_eq!(widen_labels(&[], 4).unwrap(), vec![0.0; 4]);
        assert_eq!(widen_labels(&[0], 3).unwrap(), vec![1.0, 0.5, 0.25]);
        assert_eq!(widen_labels(&[1], 2).unwrap(), vec![0.5, 1.0]);
    }

    #[test]
    fn widen_overlap_keeps_max() {
        let t = widen_labels(&[3, 5], 9).unwrap();
        assert_eq!(t[4], 0.5);
        assert_eq!(t, vec![0.0, 0.25, 0.5, 1.0, 0.5, 1.0, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn widen_rejects_bad_input() {
        assert!(matches!(widen_labels(&[4, 2], 10), Err(Error::Unsorted { index: 1 })));
        assert!(widen_labels(&[10], 10).is_err());
    }

    #[test]
    fn bce_perfect_prediction_is_near_zero() {
        let y = vec![0.0, 1.0, 1.0, 0.0];
        let curves = ActivationCurves::new(y.clone(), y.clone(), 10.0).unwrap();
        let targets = FrameTargets::new(y.clone(), y).unwrap();
        let (loss, _) = bce_loss(&curves, &targets).unwrap();
        assert!(loss >= 0.0 && loss <= 1e-6);
    }

    #[test]
    fn bce_half_half_is_log_two_per_head() {
        let curves = ActivationCurves::new(vec![0.5; 3], vec![0.5; 3], 10.0).unwrap();
        let targets = FrameTargets::new(vec![0.5; 3], vec![0.5; 3]).unwrap();
        let (loss, grads) = bce_loss(&curves, &targets).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(grads.beat.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bce_length_mismatch() {
        let curves = ActivationCurves::new(vec![0.5; 3], vec![0.5; 3], 10.0).unwrap();
        let targets = FrameTargets::new(vec![0.5; 2], vec![0.5; 2]).unwrap();
        assert!(bce_loss(&curves, &targets).is_err());
    }

    #[test]
    fn zero_classifier_outputs_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ClassifierParams::init(6, 4, &mut rng).unwrap().zeros_like();
        let h = FeatureTensor::from_fn(2, 3, 5, 10.0, |c, i, j| (c + i * j) as f64).unwrap();
        let curves = classify(&h, &p).unwrap();
        assert_eq!(curves.beat, vec![0.5; 5]);
        assert_eq!(curves.downbeat, vec![0.5; 5]);
    }

    #[test]
    fn one_frame_one_hidden_unit_closed_form() {
        let p = ClassifierParams {
            w_shared: Matrix::from_vec(1, 2, vec![0.7, -0.2]).unwrap(),
            b_shared: vec![0.1],
            w_beat: vec![1.3],
            b_beat: -0.4,
            w_down: vec![-0.6],
            b_down: 0.2,
        };
        let h = FeatureTensor::new(2, 1, 1, vec![1.5, 0.5], 10.0).unwrap();
        let curves = classify(&h, &p).unwrap();
        let z = (0.7 * 1.5 - 0.2 * 0.5 + 0.1_f64).max(0.0);
        assert!((curves.beat[0] - sigmoid(1.3 * z - 0.4)).abs() < 1e-15);
        assert!((curves.downbeat[0] - sigmoid(-0.6 * z + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn input_width_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ClassifierParams::init(5, 4, &mut rng).unwrap();
        let h = FeatureTensor::zeros(2, 3, 4, 10.0).unwrap();
        assert!(matches!(classify(&h, &p), Err(Error::Shape(_))));
    }
}
