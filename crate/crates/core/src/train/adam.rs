use crate::error::{Error, Result};
use crate::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per tensor plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &impl Parameters) -> Self {
        let m: Vec<Vec<f64>> = params
            .named_tensors()
            .iter()
            .map(|(_, _, d)| vec![0.0; d.len()])
            .collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let grads = grads.named_tensors();
    let mut tensors = params.tensors_mut();
    if grads.len() != tensors.len() || tensors.len() != state.m.len() {
        return Err(Error::Shape("parameter, gradient and moment layouts differ".into()));
    }
    for ((t, (name, _, g)), m) in tensors.iter().zip(&grads).zip(&state.m) {
        if t.len() != g.len() || t.len() != m.len() {
            return Err(Error::Shape(format!("gradient for {name} has the wrong length")));
        }
    }
    state.step += 1;
    let step = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = 1.0 - cfg.beta1.powi(step);
    let c2 = 1.0 - cfg.beta2.powi(step);
    for (((p, (_, _, g)), m), v) in tensors.iter_mut().zip(&grads).zip(&mut state.m).zip(&mut state.v) {
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &impl Parameters) -> f64 {
    grads
        .named_tensors()
        .iter()
        .flat_map(|(_, _, d)| d.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global L2 norm is at most `max_norm`. Returns the norm before
/// clipping.
pub fn clip_global_norm(grads: &mut impl Parameters, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}
