//! Central finite-difference verification of the hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::FrameTargets;
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::msam::{AblationMask, MsamConfig};
use crate::params::Parameters;
use crate::tensor::FeatureTensor;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
/// Denominator floor so that components that are zero analytically are judged in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub instances: usize,
    pub values_checked: usize,
    pub max_rel_error: f64,
    /// Tensor (or `input`) where the largest error occurred.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= REL_TOLERANCE
    }
}

/// A small random model, input and target set.
pub struct Instance {
    pub model: Model,
    pub input: FeatureTensor,
    pub targets: FrameTargets,
}

pub fn random_instance(rng: &mut impl Rng, mask: AblationMask) -> Result<Instance> {
    let n = rng.random_range(1..=8);
    let f = rng.random_range(1..=8);
    let t = rng.random_range(1..=8);
    let cfg = ModelConfig {
        msam: MsamConfig {
            channel_dim: rng.random_range(1..=4),
            ..MsamConfig::default()
        },
        hidden: rng.random_range(1..=6),
    };
    let model = Model::init(n, f, &cfg, mask, rng.random())?;
    let input = FeatureTensor::from_fn(n, f, t, 50.0, |_, _, _| rng.random_range(-1.0..1.0))?;
    let beat = (0..t).map(|_| rng.random_range(0.0..1.0)).collect();
    let down = (0..t).map(|_| rng.random_range(0.0..1.0)).collect();
    Ok(Instance {
        model,
        input,
        targets: FrameTargets::new(beat, down)?,
    })
}

/// Compares analytic and central-difference gradients for every parameter and input value.
pub fn check_instance(inst: &Instance) -> Result<(usize, f64, String)> {
    let (_, grads, grad_input) = inst.model.loss_and_grad(&inst.input, &inst.targets)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .named_tensors()
        .into_iter()
        .map(|(name, _, d)| (name, d.to_vec()))
        .collect();

    let mut checked = 0;
    let mut worst = (0.0, String::new());
    let mut model = inst.model.clone();
    for (idx, (name, values)) in analytic.iter().enumerate() {
        for (k, &a) in values.iter().enumerate() {
            let orig = model.tensors_mut()[idx][k];
            model.tensors_mut()[idx][k] = orig + FD_STEP;
            let up = model.loss(&inst.input, &inst.targets)?;
            model.tensors_mut()[idx][k] = orig - FD_STEP;
            let down = model.loss(&inst.input, &inst.targets)?;
            model.tensors_mut()[idx][k] = orig;
            let err = relative_error(a, (up - down) / (2.0 * FD_STEP));
            checked += 1;
            if err > worst.0 {
                worst = (err, name.clone());
            }
        }
    }

    let [n, f, t] = inst.input.shape();
    let base = inst.input.data().to_vec();
    for (k, &a) in grad_input.iter().enumerate() {
        let mut shifted = base.clone();
        shifted[k] += FD_STEP;
        let up = inst
            .model
            .loss(&FeatureTensor::new(n, f, t, shifted.clone(), 50.0)?, &inst.targets)?;
        shifted[k] -= 2.0 * FD_STEP;
        let down = inst
            .model
            .loss(&FeatureTensor::new(n, f, t, shifted, 50.0)?, &inst.targets)?;
        let err = relative_error(a, (up - down) / (2.0 * FD_STEP));
        checked += 1;
        if err > worst.0 {
            worst = (err, "input".into());
        }
    }
    Ok((checked, worst.0, worst.1))
}

/// Runs `instances` random checks; every eighth instance uses a different head mask so that
/// ablated configurations are covered too.
pub fn run_gradient_suite(instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = AblationMask::table_order();
    let mut report = GradCheckReport {
        instances,
        values_checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for i in 0..instances {
        let mask = if i % 8 == 7 { masks[(i / 8) % 8] } else { AblationMask::FULL };
        let inst = random_instance(&mut rng, mask)?;
        let (checked, err, name) = check_instance(&inst)?;
        report.values_checked += checked;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = name;
        }
    }
    Ok(report)
}
