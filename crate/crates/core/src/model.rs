//! The trainable model: attention aggregation followed by the classifier heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    bce_loss, classifier_backward, classify_forward, ActivationCurves, ClassifierParams, FrameTargets,
};
use crate::error::{Error, Result};
use crate::msam::{msam_backward, msam_forward, AblationMask, MsamConfig, MsamParams};
use crate::params::{Parameters, TensorStore};
use crate::tensor::FeatureTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub msam: MsamConfig,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            msam: MsamConfig::default(),
            hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub msam: MsamParams,
    pub classifier: ClassifierParams,
}

/// Gradients share the parameter layout.
pub type ModelGrads = Model;

impl Model {
    /// Initialises every weight from a seeded stream. The stream is consumed identically for every
    /// mask, so models that differ only in their enabled heads share all common weights.
    pub fn init(channels: usize, features: usize, cfg: &ModelConfig, mask: AblationMask, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let msam = MsamParams::init(channels, &cfg.msam, mask, &mut rng)?;
        let classifier = ClassifierParams::init(channels * features, cfg.hidden, &mut rng)?;
        Ok(Self { msam, classifier })
    }

    pub fn mask(&self) -> AblationMask {
        self.msam.mask()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            msam: self.msam.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn predict(&self, h: &FeatureTensor) -> Result<ActivationCurves> {
        let (h_tilde, _, _) = msam_forward(h, &self.msam)?;
        Ok(classify_forward(&h_tilde, &self.classifier)?.0)
    }

    pub fn loss(&self, h: &FeatureTensor, targets: &FrameTargets) -> Result<f64> {
        let curves = self.predict(h)?;
        Ok(bce_loss(&curves, targets)?.0)
    }

    /// Loss, parameter gradients and the gradient with respect to the input features.
    pub fn loss_and_grad(&self, h: &FeatureTensor, targets: &FrameTargets) -> Result<(f64, ModelGrads, Vec<f64>)> {
        let (h_tilde, _, msam_cache) = msam_forward(h, &self.msam)?;
        let (curves, cls_cache) = classify_forward(&h_tilde, &self.classifier)?;
        let (loss, logit_grads) = bce_loss(&curves, targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {loss}")));
        }
        let (grad_tilde, classifier) = classifier_backward(&cls_cache, &self.classifier, &logit_grads, true)?;
        let grad_tilde = grad_tilde.expect("input gradient requested");
        let (grad_h, msam) = msam_backward(&msam_cache, &self.msam, &grad_tilde)?;
        Ok((loss, Model { msam, classifier }, grad_h))
    }

    pub(crate) fn load(store: &mut TensorStore) -> Result<Self> {
        let msam = MsamParams::load(store, "msam")?;
        let classifier = ClassifierParams::load(store)?;
        if !store.is_empty() {
            return Err(Error::InvalidInput(format!(
                "unexpected tensors in checkpoint: {:?}",
                store.remaining()
            )));
        }
        Ok(Self { msam, classifier })
    }

    /// Every tensor needed to rebuild the model, including non-trainable metadata.
    pub(crate) fn checkpoint_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out: Vec<_> = self
            .named_tensors()
            .into_iter()
            .map(|(name, dims, data)| (name, dims, data.to_vec()))
            .collect();
        out.extend(self.msam.structural_tensors("msam"));
        out
    }
}

impl Parameters for Model {
    fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = self.msam.named_tensors();
        out.extend(self.classifier.named_tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.msam.tensors_mut();
        out.extend(self.classifier.tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_share_weights_across_masks() {
        let cfg = ModelConfig::default();
        let full = Model::init(2, 4, &cfg, AblationMask::FULL, 7).unwrap();
        let base = Model::init(2, 4, &cfg, AblationMask::NONE, 7).unwrap();
        assert_eq!(full.classifier, base.classifier);
        let only_f = Model::init(2, 4, &cfg, AblationMask::parse("f").unwrap(), 7).unwrap();
        assert_eq!(only_f.msam.frequency, full.msam.frequency);
    }

    #[test]
    fn parameter_counts_grow_with_heads() {
        let cfg = ModelConfig::default();
        let count = |m: &str| {
            Model::init(4, 16, &cfg, AblationMask::parse(m).unwrap(), 1)
                .unwrap()
                .num_params()
        };
        let base = count("none");
        let one = ["t", "f", "c"].map(count);
        let two = ["t,f", "t,c", "f,c"].map(count);
        let full = count("t,f,c");
        assert!(one.iter().all(|&c| c > base));
        assert!(two.iter().all(|&c| c > *one.iter().max().unwrap()));
        assert!(full > *two.iter().max().unwrap());
    }

    #[test]
    fn tensor_views_agree() {
        let mut m = Model::init(3, 2, &ModelConfig::default(), AblationMask::FULL, 3).unwrap();
        let lens: Vec<usize> = m.named_tensors().iter().map(|(_, _, d)| d.len()).collect();
        let lens_mut: Vec<usize> = m.tensors_mut().iter().map(|d| d.len()).collect();
        assert_eq!(lens, lens_mut);
    }
}
