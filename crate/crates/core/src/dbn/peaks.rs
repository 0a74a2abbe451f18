use crate::beats::BeatSequence;
use crate::error::{Error, Result};

/// Threshold peak picking, the baseline without temporal modelling.
///
/// A frame is a peak when it reaches `threshold`, is not below its left neighbour and is above
/// its right neighbour. Peaks closer than `min_interval_s` to a stronger kept peak are dropped.
pub fn pick_peaks(activation: &[f64], threshold: f64, frame_rate_hz: f64, min_interval_s: f64) -> Result<BeatSequence> {
    if !(frame_rate_hz > 0.0) {
        return Err(Error::Config(format!("frame rate must be positive, got {frame_rate_hz}")));
    }
    let n = activation.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&j| {
            let a = activation[j];
            a >= threshold && (j == 0 || a >= activation[j - 1]) && (j + 1 == n || a > activation[j + 1])
        })
        .collect();
    // strongest first, earlier frame on ties
    candidates.sort_by(|&a, &b| activation[b].total_cmp(&activation[a]).then(a.cmp(&b)));
    let min_gap = min_interval_s * frame_rate_hz;
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| (k as f64 - c as f64).abs() >= min_gap) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    BeatSequence::new(kept.into_iter().map(|k| k as f64 / frame_rate_hz).collect())
}
