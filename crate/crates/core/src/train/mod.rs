//! Clip slicing, mini-batch Adam training with early stopping, and the sub-module ablation.

mod adam;
mod data;

pub use adam::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
pub use data::{assign_splits, check_exclusive, Dataset, Piece, Splits};

use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::FrameTargets;
use crate::dbn::DbnConfig;
use crate::error::{Error, Result};
use crate::io::checkpoint::{Checkpoint, CheckpointMeta};
use crate::metrics::EvalConfig;
use crate::model::{Model, ModelConfig};
use crate::msam::AblationMask;
use crate::params::Parameters;
use crate::tensor::FeatureTensor;
use crate::track::evaluate_model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub early_stop_patience: usize,
    /// Minimum validation-loss decrease that counts as an improvement.
    pub min_delta: f64,
    pub clip_seconds: f64,
    pub clip_overlap_seconds: f64,
    /// A final shorter clip is emitted when at least this much of the piece is left uncovered.
    pub min_tail_seconds: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub ablation: AblationMask,
    pub model: ModelConfig,
    pub val_fraction: f64,
    pub grad_clip_norm: f64,
    /// Fold held out for testing; `None` trains on every fold.
    pub test_fold: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_patience: 20,
            min_delta: 1e-5,
            clip_seconds: 15.0,
            clip_overlap_seconds: 5.0,
            min_tail_seconds: 5.0,
            seed: 0,
            max_epochs: 100,
            ablation: AblationMask::FULL,
            model: ModelConfig::default(),
            val_fraction: 0.15,
            grad_clip_norm: 5.0,
            test_fold: Some(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0) {
            return fail("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return fail("invalid Adam coefficients");
        }
        if self.early_stop_patience == 0 {
            return fail("patience must be at least 1");
        }
        if !(self.clip_seconds > 0.0 && self.clip_overlap_seconds >= 0.0 && self.clip_overlap_seconds < self.clip_seconds) {
            return fail("clip overlap must be smaller than the clip length");
        }
        if !(self.grad_clip_norm > 0.0) {
            return fail("gradient clipping norm must be positive");
        }
        self.model.msam.validate()?;
        if self.model.hidden == 0 {
            return fail("hidden size must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Clip windows `[start, end)` over a piece of `len_frames` frames.
///
/// Windows have `round(clip_seconds * fps)` frames and advance by
/// `round((clip_seconds - clip_overlap_seconds) * fps)`. A piece no longer than one window is a
/// single clip; otherwise a final shorter window covers the remainder when it spans at least
/// `min_tail_seconds`.
pub fn slice_clips(len_frames: usize, frame_rate_hz: f64, cfg: &TrainConfig) -> Result<Vec<(usize, usize)>> {
    if len_frames == 0 || !(frame_rate_hz > 0.0) {
        return Err(Error::InvalidInput("piece length and frame rate must be positive".into()));
    }
    cfg.validate()?;
    let win = ((cfg.clip_seconds * frame_rate_hz).round() as usize).max(1);
    let hop = (((cfg.clip_seconds - cfg.clip_overlap_seconds) * frame_rate_hz).round() as usize).max(1);
    if len_frames <= win {
        return Ok(vec![(0, len_frames)]);
    }
    let mut clips = Vec::new();
    let mut start = 0;
    while start + win <= len_frames {
        clips.push((start, start + win));
        start += hop;
    }
    let covered = clips.last().map_or(0, |c| c.1);
    let tail = (cfg.min_tail_seconds * frame_rate_hz).round() as usize;
    if covered < len_frames && len_frames - covered >= tail {
        clips.push((start, len_frames));
    }
    Ok(clips)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig, channels: usize, features: usize, frame_rate_hz: f64) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            meta: CheckpointMeta {
                model_config: cfg.model.clone(),
                train_config: cfg.clone(),
                best_val_loss: self.best_val_loss,
                best_epoch: self.best_epoch,
                seed: cfg.seed,
                channels,
                features,
                frame_rate_hz,
            },
        }
    }
}

struct Clip {
    features: FeatureTensor,
    targets: FrameTargets,
}

fn piece_targets(p: &Piece, fps: f64) -> Result<FrameTargets> {
    let t = p.features.t();
    FrameTargets::from_frames(&p.beats.to_frames(fps, t), &p.beats.downbeats().to_frames(fps, t), t)
}

fn make_clips(ds: &Dataset, idx: &[usize], cfg: &TrainConfig) -> Result<Vec<Clip>> {
    let mut clips = Vec::new();
    for &i in idx {
        let p = &ds.pieces[i];
        let fps = p.features.frame_rate_hz();
        let targets = piece_targets(p, fps)?;
        for (s, e) in slice_clips(p.features.t(), fps, cfg)? {
            clips.push(Clip {
                features: p.features.slice_frames(s, e)?,
                targets: targets.slice(s, e),
            });
        }
    }
    Ok(clips)
}

#[cfg(feature = "parallel")]
fn map_clips<T: Send>(clips: &[&Clip], f: impl Fn(&Clip) -> Result<T> + Sync) -> Result<Vec<T>> {
    use rayon::prelude::*;
    clips.par_iter().map(|c| f(c)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_clips<T: Send>(clips: &[&Clip], f: impl Fn(&Clip) -> Result<T> + Sync) -> Result<Vec<T>> {
    clips.iter().map(|c| f(c)).collect()
}

fn accumulate(acc: &mut Model, g: &Model) {
    for (a, (_, _, d)) in acc.tensors_mut().into_iter().zip(g.named_tensors()) {
        for (x, y) in a.iter_mut().zip(d) {
            *x += y;
        }
    }
}

fn mean_loss(model: &Model, clips: &[Clip]) -> Result<f64> {
    let refs: Vec<&Clip> = clips.iter().collect();
    let losses = map_clips(&refs, |c| model.loss(&c.features, &c.targets))?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn train_model(ds: &Dataset, splits: &Splits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_model_with(ds, splits, cfg, |_| {})
}

/// Trains on `splits.train`, selecting the epoch with the lowest loss on `splits.val`.
/// `on_epoch` sees every log record as soon as the epoch finishes.
///
/// Per-clip gradients are summed in a fixed order, so results are reproducible bit for bit
/// whether or not clips are processed in parallel.
pub fn train_model_with(
    ds: &Dataset,
    splits: &Splits,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_exclusive(ds, splits)?;
    let (channels, features) = ds.feature_dims()?;
    let mut model = Model::init(channels, features, &cfg.model, cfg.ablation, cfg.seed)?;
    let mut outcome = TrainOutcome {
        model: model.clone(),
        log: Vec::new(),
        best_val_loss: None,
        best_epoch: None,
    };
    if cfg.max_epochs == 0 {
        return Ok(outcome);
    }
    if splits.train.is_empty() {
        return Err(Error::EmptySplit("no training pieces".into()));
    }
    if splits.val.is_empty() {
        return Err(Error::EmptySplit("no validation pieces".into()));
    }
    let train = make_clips(ds, &splits.train, cfg)?;
    let val = make_clips(ds, &splits.val, cfg)?;
    let adam = cfg.adam();
    let mut state = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let clips: Vec<&Clip> = batch.iter().map(|&i| &train[i]).collect();
            let results = map_clips(&clips, |c| {
                let (loss, grads, _) = model.loss_and_grad(&c.features, &c.targets)?;
                Ok((loss, grads))
            })?;
            let mut grads = model.zeros_like();
            for (loss, g) in &results {
                loss_sum += loss;
                accumulate(&mut grads, g);
            }
            let scale = 1.0 / batch.len() as f64;
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= scale);
            }
            clip_global_norm(&mut grads, cfg.grad_clip_norm);
            adam_step(&mut model, &grads, &mut state, &adam)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = mean_loss(&model, &val)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}: train loss {train_loss}, validation loss {val_loss}"
            )));
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            timestamp: now(),
        };
        on_epoch(&entry);
        outcome.log.push(entry);
        if val_loss < best - cfg.min_delta {
            best = val_loss;
            since_best = 0;
            outcome.model = model.clone();
            outcome.best_val_loss = Some(val_loss);
            outcome.best_epoch = Some(epoch);
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask: AblationMask,
    pub num_params: usize,
    pub best_val_loss: Option<f64>,
    pub beat_f: f64,
    pub downbeat_f: f64,
}

/// Trains and evaluates every head combination with the same seed, in the order
/// none, t, f, c, t+f, t+c, f+c, t+f+c.
pub fn run_ablation(
    ds: &Dataset,
    splits: &Splits,
    cfg: &TrainConfig,
    dbn: &DbnConfig,
    eval: &EvalConfig,
) -> Result<Vec<AblationRow>> {
    if splits.test.is_empty() {
        return Err(Error::EmptySplit("no test pieces".into()));
    }
    AblationMask::table_order()
        .into_iter()
        .map(|mask| {
            let run_cfg = TrainConfig {
                ablation: mask,
                ..cfg.clone()
            };
            let outcome = train_model(ds, splits, &run_cfg)?;
            let (beat, down) = evaluate_model(&outcome.model, ds, &splits.test, dbn, eval)?;
            Ok(AblationRow {
                mask,
                num_params: outcome.model.num_params(),
                best_val_loss: outcome.best_val_loss,
                beat_f: beat.mean.f_measure,
                downbeat_f: down.mean.f_measure,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(
            slice_clips(3500, 100.0, &cfg).unwrap(),
            vec![(0, 1500), (1000, 2500), (2000, 3500)]
        );
        assert_eq!(slice_clips(1500, 100.0, &cfg).unwrap(), vec![(0, 1500)]);
        assert_eq!(slice_clips(1400, 100.0, &cfg).unwrap(), vec![(0, 1400)]);
        assert_eq!(slice_clips(4000, 100.0, &cfg).unwrap().last(), Some(&(3000, 4000)));
        assert_eq!(slice_clips(3800, 100.0, &cfg).unwrap().len(), 3);
        assert!(slice_clips(0, 100.0, &cfg).is_err());
        assert!(slice_clips(10, 0.0, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            clip_overlap_seconds: 15.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
