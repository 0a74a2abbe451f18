//! Inference: activations, decoding and scoring of whole pieces.

use crate::beats::BeatSequence;
use crate::classifier::ActivationCurves;
use crate::dbn::{joint_downbeat_decode, DbnConfig};
use crate::error::Result;
use crate::metrics::{aggregate, evaluate_downbeats, evaluate_pair, DatasetReport, EvalConfig};
use crate::model::Model;
use crate::tensor::FeatureTensor;
use crate::train::Dataset;

/// Beat times with bar positions. The decoder runs at the frame rate of `h`.
pub fn track(model: &Model, h: &FeatureTensor, dbn: &DbnConfig) -> Result<(ActivationCurves, BeatSequence)> {
    let curves = model.predict(h)?;
    let cfg = DbnConfig {
        frame_rate_hz: h.frame_rate_hz(),
        ..dbn.clone()
    };
    let beats = joint_downbeat_decode(&curves.beat, &curves.downbeat, &cfg)?;
    Ok((curves, beats))
}

/// Beat and downbeat reports over the pieces at `indices`.
pub fn evaluate_model(
    model: &Model,
    ds: &Dataset,
    indices: &[usize],
    dbn: &DbnConfig,
    eval: &EvalConfig,
) -> Result<(DatasetReport, DatasetReport)> {
    let mut beat = Vec::with_capacity(indices.len());
    let mut down = Vec::with_capacity(indices.len());
    for &i in indices {
        let p = &ds.pieces[i];
        let (_, est) = track(model, &p.features, dbn)?;
        beat.push((p.piece_id.clone(), evaluate_pair(&est, &p.beats, eval)?));
        down.push((p.piece_id.clone(), evaluate_downbeats(&est, &p.beats, eval)?));
    }
    Ok((aggregate(beat)?, aggregate(down)?))
}
