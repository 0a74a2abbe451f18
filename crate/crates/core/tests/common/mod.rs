//! Reference implementations used as test oracles. They favour obviousness over speed and share
//! no code with the library beyond its data types.
#![allow(dead_code)]

use beatagg::dbn::{Observations, StateSpace};
use beatagg::msam::{ChannelAttnParams, MsConvParams};
use beatagg::{FeatureTensor, Kernel, MsamParams};
use rand::Rng;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn tap(k: &Kernel, o: usize, c: usize, w: usize) -> f64 {
    k.data[(o * k.in_ch + c) * k.width + w]
}

/// `y[o][j] = sum_c sum_w k[o][c][w] * x[c][j + (w - half) * d]`, zero outside.
fn conv(x: &[Vec<f64>], k: &Kernel, d: usize) -> Vec<Vec<f64>> {
    let len = x[0].len() as isize;
    let half = (k.width / 2) as isize;
    let mut y = vec![vec![0.0; len as usize]; k.out_ch];
    for (o, row) in y.iter_mut().enumerate() {
        for (j, out) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (c, xc) in x.iter().enumerate() {
                for w in 0..k.width {
                    let pos = j as isize + (w as isize - half) * d as isize;
                    if pos >= 0 && pos < len {
                        s += tap(k, o, c, w) * xc[pos as usize];
                    }
                }
            }
            *out = s;
        }
    }
    y
}

fn ms_conv_head(x: &[Vec<f64>], p: &MsConvParams) -> Vec<Vec<f64>> {
    let n = x.len();
    let len = x[0].len();
    let branches: Vec<Vec<Vec<f64>>> = p
        .kernels
        .iter()
        .zip(&p.dilations)
        .map(|(k, &d)| conv(x, k, d))
        .collect();
    let mut out = vec![vec![0.0; len]; n];
    for (o, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let mut z = p.mlp_bias[o];
            for (b, br) in branches.iter().enumerate() {
                for (c, brc) in br.iter().enumerate() {
                    z += p.mlp_weight.data[o * p.mlp_weight.cols + b * n + c] * brc[j];
                }
            }
            *v = sig(z);
        }
    }
    out
}

fn channel_head(hc: &[f64], p: &ChannelAttnParams) -> Vec<f64> {
    let n = hc.len();
    let d = p.proj_q.out_ch;
    let x = vec![hc.to_vec()];
    let q = conv(&x, &p.proj_q, 1);
    let k = conv(&x, &p.proj_k, 1);
    let v = conv(&x, &p.proj_v, 1);
    let mut mixed = vec![vec![0.0; n]; d];
    for a in 0..n {
        let scores: Vec<f64> = (0..n)
            .map(|b| (0..d).map(|e| q[e][a] * k[e][b]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for e in 0..d {
            mixed[e][a] = (0..n).map(|b| (scores[b] - m).exp() / z * v[e][b]).sum();
        }
    }
    conv(&mixed, &p.proj_out, 1)[0].iter().map(|&z| sig(z)).collect()
}

/// Straight-line attention aggregation: pools, three gates, broadcast product, residual gating.
pub fn msam_reference(h: &FeatureTensor, p: &MsamParams) -> Vec<f64> {
    let [n, f, t] = h.shape();
    let ht: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..t).map(|j| (0..f).map(|i| h.get(c, i, j)).sum::<f64>() / f as f64).collect())
        .collect();
    let hf: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..f).map(|i| (0..t).map(|j| h.get(c, i, j)).sum::<f64>() / t as f64).collect())
        .collect();
    let hc: Vec<f64> = (0..n)
        .map(|c| (0..f).flat_map(|i| (0..t).map(move |j| (i, j))).map(|(i, j)| h.get(c, i, j)).sum::<f64>() / (f * t) as f64)
        .collect();
    let at = p.temporal.as_ref().map(|q| ms_conv_head(&ht, q));
    let af = p.frequency.as_ref().map(|q| ms_conv_head(&hf, q));
    let ac = p.channel.as_ref().map(|q| channel_head(&hc, q));
    let mut out = Vec::with_capacity(n * f * t);
    for c in 0..n {
        for i in 0..f {
            for j in 0..t {
                let x = h.get(c, i, j);
                if at.is_none() && af.is_none() && ac.is_none() {
                    out.push(x);
                    continue;
                }
                let mut g = 1.0;
                if let Some(a) = &at {
                    g *= a[c][j];
                }
                if let Some(a) = &af {
                    g *= a[c][i];
                }
                if let Some(a) = &ac {
                    g *= a[c];
                }
                out.push(x * (1.0 + g));
            }
        }
    }
    out
}

/// Exhaustive MAP path: every state sequence reachable through nonzero transitions is scored
/// in the same accumulation order as a forward pass. Ties go to the path that is smallest when
/// compared from the last frame backwards.
pub fn brute_force_viterbi(space: &StateSpace, obs: &Observations) -> (Vec<usize>, f64) {
    let t_len = obs.len();
    let n = space.len();
    let regions: Vec<_> = space.states().map(|s| space.region(s)).collect();
    let init = -(n as f64).ln();
    let succ: Vec<Vec<(usize, f64)>> = (0..n).map(|i| space.successors(i)).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut path = Vec::with_capacity(t_len);

    fn better(score: f64, path: &[usize], best: &Option<(f64, Vec<usize>)>) -> bool {
        match best {
            None => true,
            Some((b, bp)) => score > *b || (score == *b && path.iter().rev().lt(bp.iter().rev())),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        s: usize,
        score: f64,
        path: &mut Vec<usize>,
        t_len: usize,
        succ: &[Vec<(usize, f64)>],
        obs: &Observations,
        regions: &[beatagg::dbn::Region],
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        path.push(s);
        if path.len() == t_len {
            if better(score, path, best) {
                *best = Some((score, path.clone()));
            }
        } else {
            let frame = path.len();
            for &(next, lp) in &succ[s] {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let sc = score + lp + obs.score(frame, regions[next]);
                walk(next, sc, path, t_len, succ, obs, regions, best);
            }
        }
        path.pop();
    }

    for s in 0..n {
        let score = init + obs.score(0, regions[s]);
        walk(s, score, &mut path, t_len, &succ, obs, &regions, &mut best);
    }
    let (score, path) = best.expect("at least one path");
    (path, score)
}

/// Maximum one-to-one matching between events closer than the window (augmenting paths).
pub fn max_matching(est: &[f64], reference: &[f64], window: f64) -> usize {
    fn augment(r: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &e in &adj[r] {
            if !seen[e] {
                seen[e] = true;
                if owner[e].is_none() || augment(owner[e].unwrap(), adj, seen, owner) {
                    owner[e] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    let adj: Vec<Vec<usize>> = reference
        .iter()
        .map(|&r| (0..est.len()).filter(|&e| (est[e] - r).abs() <= window).collect())
        .collect();
    let mut owner = vec![None; est.len()];
    (0..reference.len())
        .filter(|&r| augment(r, &adj, &mut vec![false; est.len()], &mut owner))
        .count()
}

/// Continuity scores by scanning every window of consecutive estimates.
pub fn continuity_reference(est: &[f64], reference: &[f64], tol: f64) -> (f64, f64) {
    let ok: Vec<bool> = (0..est.len())
        .map(|i| {
            let mut j = 0;
            for k in 1..reference.len() {
                if (est[i] - reference[k]).abs() < (est[i] - reference[j]).abs() {
                    j = k;
                }
            }
            let period = if j > 0 {
                reference[j] - reference[j - 1]
            } else {
                reference[1] - reference[0]
            };
            let phase_ok = (est[i] - reference[j]).abs() < tol * period;
            let interval = match i {
                0 if est.len() == 1 => return phase_ok,
                0 => est[1] - est[0],
                _ => est[i] - est[i - 1],
            };
            phase_ok && (interval - period).abs() < tol * period
        })
        .collect();
    let mut longest = 0;
    for a in 0..ok.len() {
        for b in a..ok.len() {
            if ok[a..=b].iter().all(|&x| x) {
                longest = longest.max(b - a + 1);
            }
        }
    }
    let total = ok.iter().filter(|&&x| x).count();
    let r = reference.len() as f64;
    ((longest as f64 / r).min(1.0), (total as f64 / r).min(1.0))
}

/// Target value at every frame: the best of 1, 0.5, 0.25 by distance to any annotated frame.
pub fn widen_reference(frames: &[usize], t: usize) -> Vec<f64> {
    (0..t)
        .map(|j| {
            frames
                .iter()
                .map(|&k| match (j as i64 - k as i64).abs() {
                    0 => 1.0,
                    1 => 0.5,
                    2 => 0.25,
                    _ => 0.0,
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Strictly increasing times with at least `min_gap` between events.
pub fn random_times(rng: &mut impl Rng, count: usize, span: f64, min_gap: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..span)).collect();
    t.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(count);
    for x in t {
        if out.last().is_none_or(|&p| x - p >= min_gap) {
            out.push(x);
        }
    }
    out
}
