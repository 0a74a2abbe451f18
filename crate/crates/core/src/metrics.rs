//! Beat evaluation: F-measure, continuity (CMLc/CMLt) and allowed-metric-level continuity
//! (AMLc/AMLt).

use serde::{Deserialize, Serialize};

use crate::beats::BeatSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Half-width of the F-measure tolerance window in seconds.
    pub window_s: f64,
    /// Continuity tolerance as a fraction of the local inter-annotation interval.
    pub continuity_tolerance: f64,
    /// Events before this time are dropped from both sequences; `None` disables trimming.
    pub trim_s: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            window_s: 0.07,
            continuity_tolerance: 0.175,
            trim_s: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FMeasure {
    pub f_measure: f64,
    pub precision: f64,
    pub recall: f64,
    pub matched: usize,
    pub estimated: usize,
    pub reference: usize,
}

/// One-to-one matching in time order: each reference takes the earliest unmatched estimate
/// within `window_s`. Equal-width windows make this greedy matching maximum.
pub fn match_count(est: &[f64], reference: &[f64], window_s: f64) -> usize {
    let mut next = 0;
    let mut matched = 0;
    for &r in reference {
        while next < est.len() && est[next] < r - window_s {
            next += 1;
        }
        if next < est.len() && est[next] <= r + window_s {
            matched += 1;
            next += 1;
        }
    }
    matched
}

pub fn f_measure(est: &BeatSequence, reference: &BeatSequence, window_s: f64) -> FMeasure {
    let (ne, nr) = (est.len(), reference.len());
    let matched = match_count(est.times(), reference.times(), window_s);
    let precision = if ne == 0 { 0.0 } else { matched as f64 / ne as f64 };
    let recall = if nr == 0 { 0.0 } else { matched as f64 / nr as f64 };
    let f = if ne == 0 && nr == 0 {
        1.0
    } else if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    FMeasure {
        f_measure: f,
        precision,
        recall,
        matched,
        estimated: ne,
        reference: nr,
    }
}

fn nearest(reference: &[f64], t: f64) -> usize {
    let i = reference.partition_point(|&r| r < t);
    if i == 0 {
        0
    } else if i == reference.len() || t - reference[i - 1] <= reference[i] - t {
        i - 1
    } else {
        i
    }
}

/// Per-estimate correctness at the reference metric level.
///
/// Estimate `b_i` is correct when its nearest reference `a_j` satisfies
/// `|b_i - a_j| < tol * D_j` and the estimate interval is within `tol * D_j` of
/// `D_j = a_j - a_(j-1)` (`a_1 - a_0` for the first reference). The interval of the first
/// estimate is taken forwards (`b_1 - b_0`); a lone estimate is judged on phase only.
pub fn correct_estimates(est: &[f64], reference: &[f64], tolerance: f64) -> Result<Vec<bool>> {
    if reference.len() < 2 {
        return Err(Error::TooFewEvents {
            needed: 2,
            got: reference.len(),
        });
    }
    Ok((0..est.len())
        .map(|i| {
            let j = nearest(reference, est[i]);
            let period = if j == 0 {
                reference[1] - reference[0]
            } else {
                reference[j] - reference[j - 1]
            };
            let tol = tolerance * period;
            let interval = if i > 0 {
                Some(est[i] - est[i - 1])
            } else if est.len() > 1 {
                Some(est[1] - est[0])
            } else {
                None
            };
            (est[i] - reference[j]).abs() < tol && interval.is_none_or(|d| (d - period).abs() < tol)
        })
        .collect())
}

/// `(cml_c, cml_t)`: longest run of correct estimates and total correct estimates, both
/// relative to the reference length and capped at 1.
pub fn continuity_with(est: &BeatSequence, reference: &BeatSequence, tolerance: f64) -> Result<(f64, f64)> {
    let correct = correct_estimates(est.times(), reference.times(), tolerance)?;
    let (mut run, mut longest, mut total) = (0usize, 0usize, 0usize);
    for c in correct {
        if c {
            run += 1;
            total += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    let n = reference.len() as f64;
    Ok(((longest as f64 / n).min(1.0), (total as f64 / n).min(1.0)))
}

pub fn continuity_scores(est: &BeatSequence, reference: &BeatSequence) -> Result<(f64, f64)> {
    continuity_with(est, reference, EvalConfig::default().continuity_tolerance)
}

/// Original, off-beat, double tempo, half tempo (odd beats), half tempo (even beats).
pub fn metric_variations(reference: &BeatSequence) -> Result<Vec<BeatSequence>> {
    let r = reference.times();
    if r.len() < 2 {
        return Err(Error::TooFewEvents { needed: 2, got: r.len() });
    }
    let mids: Vec<f64> = r.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut double = Vec::with_capacity(2 * r.len() - 1);
    for (i, &t) in r.iter().enumerate() {
        double.push(t);
        if let Some(&m) = mids.get(i) {
            double.push(m);
        }
    }
    let odd = r.iter().step_by(2).copied().collect();
    let even = r.iter().skip(1).step_by(2).copied().collect();
    [r.to_vec(), mids, double, odd, even]
        .into_iter()
        .map(BeatSequence::new)
        .collect()
}

/// Maximum continuity over the metric variations that have at least two events.
pub fn aml_with(est: &BeatSequence, reference: &BeatSequence, tolerance: f64) -> Result<(f64, f64)> {
    let mut best = (0.0f64, 0.0f64);
    for v in metric_variations(reference)? {
        if v.len() < 2 {
            continue;
        }
        let (c, t) = continuity_with(est, &v, tolerance)?;
        best = (best.0.max(c), best.1.max(t));
    }
    Ok(best)
}

pub fn aml_scores(est: &BeatSequence, reference: &BeatSequence) -> Result<(f64, f64)> {
    aml_with(est, reference, EvalConfig::default().continuity_tolerance)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub f_measure: f64,
    pub cml_c: f64,
    pub cml_t: f64,
    pub aml_c: f64,
    pub aml_t: f64,
    pub matched: usize,
    pub estimated: usize,
    pub reference: usize,
}

/// Scores one estimate against one reference after the configured trim.
///
/// Continuity needs two reference events: two empty sequences score 1, any other case with
/// fewer than two references scores 0.
pub fn evaluate_pair(est: &BeatSequence, reference: &BeatSequence, cfg: &EvalConfig) -> Result<EvalReport> {
    let (est, reference) = match cfg.trim_s {
        Some(t) => (est.trimmed(t), reference.trimmed(t)),
        None => (est.clone(), reference.clone()),
    };
    let f = f_measure(&est, &reference, cfg.window_s);
    let ((cml_c, cml_t), (aml_c, aml_t)) = if reference.len() >= 2 {
        (
            continuity_with(&est, &reference, cfg.continuity_tolerance)?,
            aml_with(&est, &reference, cfg.continuity_tolerance)?,
        )
    } else if est.is_empty() && reference.is_empty() {
        ((1.0, 1.0), (1.0, 1.0))
    } else {
        ((0.0, 0.0), (0.0, 0.0))
    };
    Ok(EvalReport {
        f_measure: f.f_measure,
        cml_c,
        cml_t,
        aml_c,
        aml_t,
        matched: f.matched,
        estimated: f.estimated,
        reference: f.reference,
    })
}

/// Same metrics on the position-1 events of both sequences.
pub fn evaluate_downbeats(est: &BeatSequence, reference: &BeatSequence, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate_pair(&est.downbeats(), &reference.downbeats(), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    /// Unweighted mean over pieces; counts are summed.
    pub mean: EvalReport,
    pub pieces: Vec<(String, EvalReport)>,
}

pub fn aggregate(pieces: Vec<(String, EvalReport)>) -> Result<DatasetReport> {
    if pieces.is_empty() {
        return Err(Error::EmptySplit("no pieces to evaluate".into()));
    }
    let n = pieces.len() as f64;
    let mut mean = EvalReport::default();
    for (_, r) in &pieces {
        mean.f_measure += r.f_measure / n;
        mean.cml_c += r.cml_c / n;
        mean.cml_t += r.cml_t / n;
        mean.aml_c += r.aml_c / n;
        mean.aml_t += r.aml_t / n;
        mean.matched += r.matched;
        mean.estimated += r.estimated;
        mean.reference += r.reference;
    }
    Ok(DatasetReport { mean, pieces })
}

/// Evaluates `(piece id, estimate, reference)` triples.
pub fn evaluate_dataset(pairs: &[(String, BeatSequence, BeatSequence)], cfg: &EvalConfig) -> Result<DatasetReport> {
    let pieces = pairs
        .iter()
        .map(|(id, est, reference)| Ok((id.clone(), evaluate_pair(est, reference, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    aggregate(pieces)
}
