//! Synthetic datasets with known beat grids.
//!
//! Each piece draws a duration, tempo, phase, meter and bar offset. Features are Gaussian noise
//! plus `+1.0` on features `[0, f/4)` at every beat frame and `+1.5` on `[f/4, f/2)` at downbeat
//! frames, identical across channels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::annotations::format_beats;
use super::manifest::{Manifest, ManifestEntry, NUM_FOLDS};
use super::{folds::split_folds, npy::write_features, write_atomic};
use crate::beats::BeatSequence;
use crate::error::{Error, Result};
use crate::tensor::FeatureTensor;

pub const BEAT_AMPLITUDE: f64 = 1.0;
pub const DOWNBEAT_AMPLITUDE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub dataset: String,
    pub pieces: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub min_bpm: f64,
    pub max_bpm: f64,
    pub meters: Vec<usize>,
    /// Maximum relative tempo change over a piece; each piece draws from `[-d, d]`.
    pub drift_fraction: f64,
    pub noise_sigma: f64,
    pub channels: usize,
    pub features: usize,
    pub frame_rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            pieces: 80,
            min_duration_s: 30.0,
            max_duration_s: 60.0,
            min_bpm: 60.0,
            max_bpm: 180.0,
            meters: vec![3, 4],
            drift_fraction: 0.0,
            noise_sigma: 0.05,
            channels: 4,
            features: 16,
            frame_rate_hz: 50.0,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.min_bpm > 0.0 && self.min_bpm <= self.max_bpm && self.max_bpm < 400.0) {
            return fail(format!("tempo range {}..{} BPM must lie in (0, 400)", self.min_bpm, self.max_bpm));
        }
        if !(self.min_duration_s > 0.0 && self.min_duration_s <= self.max_duration_s) {
            return fail("invalid duration range".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return fail("noise sigma must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.drift_fraction) {
            return fail("drift fraction must lie in [0, 1)".into());
        }
        if self.meters.is_empty() || self.meters.contains(&0) {
            return fail(format!("invalid meters {:?}", self.meters));
        }
        if self.channels == 0 || self.features < 2 {
            return fail("need at least one channel and two features".into());
        }
        if !(self.frame_rate_hz > 0.0) {
            return fail("frame rate must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPiece {
    pub piece_id: String,
    pub features: FeatureTensor,
    pub beats: BeatSequence,
    pub bpm: f64,
    pub meter: usize,
}

/// Beat times `phase + k * period` below `duration`, or the drifting equivalent where the
/// tempo changes linearly from `bpm` to `bpm * (1 + drift)`.
pub fn beat_grid(duration: f64, bpm: f64, phase: f64, drift: f64) -> Vec<f64> {
    let period = 60.0 / bpm;
    let mut times = Vec::new();
    if drift == 0.0 {
        let mut k = 0usize;
        loop {
            let t = phase + k as f64 * period;
            if t >= duration {
                break;
            }
            times.push(t);
            k += 1;
        }
    } else {
        let mut t = phase;
        while t < duration {
            times.push(t);
            t += 60.0 / (bpm * (1.0 + drift * t / duration));
        }
    }
    times
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<SynthPiece>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let (n, f, fps) = (spec.channels, spec.features, spec.frame_rate_hz);
    let width = digits(spec.pieces);
    let mut pieces = Vec::with_capacity(spec.pieces);
    for idx in 0..spec.pieces {
        let duration = rng.random_range(spec.min_duration_s..=spec.max_duration_s);
        let bpm = rng.random_range(spec.min_bpm..=spec.max_bpm);
        let meter = spec.meters[rng.random_range(0..spec.meters.len())];
        let phase = rng.random_range(0.0..60.0 / bpm);
        let offset = rng.random_range(0..meter);
        let drift = spec.drift_fraction * rng.random_range(-1.0..=1.0);

        let times = beat_grid(duration, bpm, phase, drift);
        let positions: Vec<u32> = (0..times.len()).map(|k| ((offset + k) % meter) as u32 + 1).collect();
        let t = (duration * fps).round() as usize;
        let mut beat_frame = vec![false; t];
        let mut down_frame = vec![false; t];
        for (&time, &pos) in times.iter().zip(&positions) {
            let k = (time * fps).round() as usize;
            if k < t {
                beat_frame[k] = true;
                down_frame[k] |= pos == 1;
            }
        }
        let (beat_band, down_band) = (0..f / 4, f / 4..f / 2);
        let features = FeatureTensor::from_fn(n, f, t, fps, |_, i, j| {
            let mut v = noise.sample(&mut rng);
            if beat_frame[j] && beat_band.contains(&i) {
                v += BEAT_AMPLITUDE;
            }
            if down_frame[j] && down_band.contains(&i) {
                v += DOWNBEAT_AMPLITUDE;
            }
            v
        })?;
        pieces.push(SynthPiece {
            piece_id: format!("synth_{idx:0width$}"),
            features,
            beats: BeatSequence::with_positions(times, positions)?,
            bpm,
            meter,
        });
    }
    Ok(pieces)
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len().max(3)
}

/// Writes `manifest.json`, `features/<id>.npy` and `annotations/<id>.beats` under `out_dir`.
/// Folds come from a seeded shuffle when there are enough pieces, round-robin otherwise.
pub fn write_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    let pieces = generate_synthetic(spec)?;
    let folds = if pieces.len() >= NUM_FOLDS {
        split_folds(pieces.len(), NUM_FOLDS, spec.seed)?
    } else {
        (0..pieces.len()).map(|i| i % NUM_FOLDS).collect()
    };
    let mut entries = Vec::with_capacity(pieces.len());
    for (p, fold) in pieces.iter().zip(folds) {
        let feature_path = format!("features/{}.npy", p.piece_id);
        let annotation_path = format!("annotations/{}.beats", p.piece_id);
        write_features(&out_dir.join(&feature_path), &p.features)?;
        write_atomic(&out_dir.join(&annotation_path), format_beats(&p.beats, 6).as_bytes())?;
        entries.push(ManifestEntry {
            piece_id: p.piece_id.clone(),
            feature_path,
            annotation_path,
            fold,
            split: None,
        });
    }
    let manifest = Manifest {
        dataset: spec.dataset.clone(),
        frame_rate_hz: spec.frame_rate_hz,
        entries,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
