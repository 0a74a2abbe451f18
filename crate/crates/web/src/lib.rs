//! Browser demo: decoder versus peak picking, attention maps, and a metrics explorer.
//!
//! Every export takes plain numbers or strings and returns a JSON string, so the page needs no
//! bindings beyond `wasm-bindgen`'s generated glue.

use beatagg::dbn::{pick_peaks, viterbi_decode};
use beatagg::io::{generate_synthetic, parse_annotations, SynthSpec};
use beatagg::metrics::{evaluate_pair, EvalConfig};
use beatagg::msam::msam_forward;
use beatagg::{AblationMask, BeatSequence, DbnConfig, MsamConfig, MsamParams, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn finish(r: Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

/// Synthetic activation at 100 fps with `drop` of the spikes removed and uniform noise below
/// `noise`; both decoders run on it and are scored against the true grid.
pub fn dbn_vs_peaks_value(bpm: f64, drop: f64, noise: f64, seed: u64) -> Result<Value> {
    let cfg = DbnConfig::default();
    let fps = cfg.frame_rate_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (duration, period) = (30.0, 60.0 / bpm.clamp(30.0, 300.0));
    let t = (duration * fps) as usize;
    let times: Vec<f64> = (0..).map(|k| 0.25 + k as f64 * period).take_while(|&x| x < duration - 0.05).collect();
    let noise = noise.clamp(0.0, 0.9);
    let mut act: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..=noise)).collect();
    for &x in &times {
        if rng.random_bool(drop.clamp(0.0, 1.0)) {
            continue;
        }
        let k = (x * fps).round() as usize;
        for (d, w) in [(0usize, 0.9), (1, 0.45), (2, 0.2)] {
            for j in [k.saturating_sub(d), (k + d).min(t - 1)] {
                act[j] = act[j].max(w);
            }
        }
    }
    let reference = BeatSequence::new(times)?;
    let dbn = viterbi_decode(&act, &cfg)?;
    let peaks = pick_peaks(&act, 0.5, fps, 0.0)?;
    let eval = EvalConfig::default();
    Ok(json!({
        "frame_rate_hz": fps,
        "activation": act,
        "reference": reference.times(),
        "dbn": { "beats": dbn.times(), "f_measure": evaluate_pair(&dbn, &reference, &eval)?.f_measure },
        "peaks": { "beats": peaks.times(), "f_measure": evaluate_pair(&peaks, &reference, &eval)?.f_measure },
    }))
}

#[wasm_bindgen]
pub fn dbn_vs_peaks(bpm: f64, drop: f64, noise: f64, seed: u32) -> String {
    finish(dbn_vs_peaks_value(bpm, drop, noise, u64::from(seed)))
}

/// Attention maps of a randomly initialised module over one synthetic piece.
/// `mask` is a `t,f,c` style list.
pub fn attention_maps_value(mask: &str, seed: u64) -> Result<Value> {
    let spec = SynthSpec {
        pieces: 1,
        min_duration_s: 6.0,
        max_duration_s: 6.0,
        channels: 4,
        features: 16,
        frame_rate_hz: 50.0,
        seed,
        ..SynthSpec::default()
    };
    let piece = generate_synthetic(&spec)?.remove(0);
    let h = &piece.features;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let p = MsamParams::init(h.n(), &MsamConfig::default(), AblationMask::parse(mask)?, &mut rng)?;
    let (_, maps, _) = msam_forward(h, &p)?;
    let rows = |m: &beatagg::Matrix| -> Vec<Vec<f64>> { m.data.chunks(m.cols).map(<[f64]>::to_vec).collect() };
    let [n, f, t] = h.shape();
    // fused map averaged over channels, [f][t]
    let fused = maps.fused.as_ref().map(|a| {
        (0..f)
            .map(|i| (0..t).map(|j| (0..n).map(|c| a[(c * f + i) * t + j]).sum::<f64>() / n as f64).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    });
    let input: Vec<Vec<f64>> = (0..f).map(|i| (0..t).map(|j| h.get(0, i, j)).collect()).collect();
    Ok(json!({
        "shape": [n, f, t],
        "bpm": piece.bpm,
        "beats": piece.beats.times(),
        "input_channel0": input,
        "temporal": maps.attn_t.as_ref().map(rows),
        "frequency": maps.attn_f.as_ref().map(rows),
        "channel": maps.attn_c,
        "fused_mean": fused,
    }))
}

#[wasm_bindgen]
pub fn attention_maps(mask: &str, seed: u32) -> String {
    finish(attention_maps_value(mask, u64::from(seed)))
}

/// Scores two annotation texts (one `time [position]` per line).
pub fn evaluate_texts_value(estimate: &str, reference: &str, window_s: f64, trim: bool) -> Result<Value> {
    let est = parse_annotations(estimate, "estimate")?;
    let reference = parse_annotations(reference, "reference")?;
    let cfg = EvalConfig {
        window_s,
        trim_s: trim.then_some(5.0),
        ..EvalConfig::default()
    };
    Ok(json!({ "beats": evaluate_pair(&est, &reference, &cfg)? }))
}

#[wasm_bindgen]
pub fn evaluate_texts(estimate: &str, reference: &str, window_s: f64, trim: bool) -> String {
    finish(evaluate_texts_value(estimate, reference, window_s, trim))
}
