//! Bar-pointer hidden Markov model decoded with Viterbi.
//!
//! A state is `(meter, bar position beta, beat interval tau, phase phi)`. The phase counts down
//! one per frame; from `phi = 0` the model moves to `(beta + 1 mod B, tau', tau' - 1)` with
//! log-probability `-lambda |ln(tau' / tau)|` renormalised over all `tau'`. The last
//! `ceil(tau / Lambda)` phases of every beat (`phi * Lambda < tau`) form the beat region,
//! which is scored against the activation; the remaining phases score its complement.
//!
//! Beat-only decoding uses a single meter with one beat per bar.

mod peaks;

pub use peaks::pick_peaks;

use serde::{Deserialize, Serialize};

use crate::beats::BeatSequence;
use crate::error::{Error, Result};

/// Probability floor inside every logarithm.
pub const OBS_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbnConfig {
    pub frame_rate_hz: f64,
    pub min_bpm: f64,
    pub max_bpm: f64,
    pub transition_lambda: f64,
    pub observation_lambda: f64,
    /// Meter hypotheses for joint downbeat decoding.
    pub beats_per_bar: Vec<usize>,
    /// Place each beat on the strongest activation frame of its beat region
    /// instead of on the region's final (`phi = 0`) frame.
    pub refine_to_peak: bool,
}

impl Default for DbnConfig {
    fn default() -> Self {
        Self {
            frame_rate_hz: 100.0,
            min_bpm: 55.0,
            max_bpm: 215.0,
            transition_lambda: 100.0,
            observation_lambda: 16.0,
            beats_per_bar: vec![3, 4],
            refine_to_peak: true,
        }
    }
}

impl DbnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate_hz > 0.0) {
            return Err(Error::Config(format!("frame rate must be positive, got {}", self.frame_rate_hz)));
        }
        if !(self.min_bpm > 0.0 && self.min_bpm <= self.max_bpm) {
            return Err(Error::Config(format!(
                "empty tempo range {}..{} BPM",
                self.min_bpm, self.max_bpm
            )));
        }
        if !(self.transition_lambda > 0.0) {
            return Err(Error::Config("transition lambda must be positive".into()));
        }
        if !(self.observation_lambda >= 1.0) {
            return Err(Error::Config("observation lambda must be at least 1".into()));
        }
        if self.beats_per_bar.is_empty() || self.beats_per_bar.contains(&0) {
            return Err(Error::Config(format!(
                "invalid meter hypotheses {:?}",
                self.beats_per_bar
            )));
        }
        Ok(())
    }

    /// Beat intervals in frames: `ceil(60 fps / max_bpm) ..= ceil(60 fps / min_bpm)`.
    pub fn interval_range(&self) -> Result<(usize, usize)> {
        self.validate()?;
        let frames = |bpm: f64| (60.0 * self.frame_rate_hz / bpm - 1e-9).ceil().max(1.0) as usize;
        let (lo, hi) = (frames(self.max_bpm), frames(self.min_bpm));
        if lo > hi {
            return Err(Error::Config("empty tempo range".into()));
        }
        Ok((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DbnState {
    /// Index into the meter hypotheses.
    pub meter: usize,
    /// Bar position, `0 ..beats_per_bar`.
    pub beat: usize,
    /// Beat period in frames.
    pub interval: usize,
    /// Frames left in the current beat, `0 .. interval`.
    pub phase: usize,
}

/// Observation class of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    NonBeat,
    Beat,
    Downbeat,
}

/// Enumerated states with a total order (meter, bar position, interval, phase) and
/// the tempo transition table.
#[derive(Debug, Clone)]
pub struct StateSpace {
    intervals: Vec<usize>,
    meters: Vec<usize>,
    obs_lambda: f64,
    joint: bool,
    /// `log_tempo[from * nt + to]`
    log_tempo: Vec<f64>,
    /// Offset of each interval inside a (meter, beat) block.
    tempo_offsets: Vec<usize>,
    block_len: usize,
    /// First block index of each meter.
    meter_blocks: Vec<usize>,
    len: usize,
}

impl StateSpace {
    /// Beat-only space for all intervals in `min_interval ..= max_interval`.
    pub fn beat_only(min_interval: usize, max_interval: usize, lambda: f64, obs_lambda: f64) -> Result<Self> {
        Self::build(min_interval, max_interval, lambda, obs_lambda, vec![1], false)
    }

    /// Joint beat/downbeat space over the given meter hypotheses.
    pub fn bar_pointer(
        min_interval: usize,
        max_interval: usize,
        lambda: f64,
        obs_lambda: f64,
        meters: Vec<usize>,
    ) -> Result<Self> {
        Self::build(min_interval, max_interval, lambda, obs_lambda, meters, true)
    }

    fn build(
        min_interval: usize,
        max_interval: usize,
        lambda: f64,
        obs_lambda: f64,
        meters: Vec<usize>,
        joint: bool,
    ) -> Result<Self> {
        if min_interval == 0 || min_interval > max_interval {
            return Err(Error::Config(format!(
                "empty interval range {min_interval}..={max_interval}"
            )));
        }
        if meters.is_empty() || meters.contains(&0) {
            return Err(Error::Config(format!("invalid meters {meters:?}")));
        }
        let intervals: Vec<usize> = (min_interval..=max_interval).collect();
        let nt = intervals.len();
        let mut log_tempo = vec![0.0; nt * nt];
        for (a, &from) in intervals.iter().enumerate() {
            let row = &mut log_tempo[a * nt..(a + 1) * nt];
            for (b, &to) in intervals.iter().enumerate() {
                row[b] = -lambda * (to as f64 / from as f64).ln().abs();
            }
            // the diagonal holds the row maximum (0), so the log-sum-exp is stable
            let norm = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= norm;
            }
        }
        let mut tempo_offsets = Vec::with_capacity(nt);
        let mut acc = 0;
        for &tau in &intervals {
            tempo_offsets.push(acc);
            acc += tau;
        }
        let block_len = acc;
        let mut meter_blocks = Vec::with_capacity(meters.len());
        let mut blocks = 0;
        for &b in &meters {
            meter_blocks.push(blocks);
            blocks += b;
        }
        Ok(Self {
            intervals,
            meters,
            obs_lambda,
            joint,
            log_tempo,
            tempo_offsets,
            block_len,
            meter_blocks,
            len: blocks * block_len,
        })
    }

    pub fn from_config(cfg: &DbnConfig) -> Result<Self> {
        let (lo, hi) = cfg.interval_range()?;
        Self::beat_only(lo, hi, cfg.transition_lambda, cfg.observation_lambda)
    }

    pub fn joint_from_config(cfg: &DbnConfig) -> Result<Self> {
        let (lo, hi) = cfg.interval_range()?;
        Self::bar_pointer(lo, hi, cfg.transition_lambda, cfg.observation_lambda, cfg.beats_per_bar.clone())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn intervals(&self) -> &[usize] {
        &self.intervals
    }

    pub fn meters(&self) -> &[usize] {
        &self.meters
    }

    fn block_start(&self, meter: usize, beat: usize) -> usize {
        (self.meter_blocks[meter] + beat) * self.block_len
    }

    pub fn index(&self, s: DbnState) -> usize {
        let ti = s.interval - self.intervals[0];
        self.block_start(s.meter, s.beat) + self.tempo_offsets[ti] + s.phase
    }

    pub fn state(&self, idx: usize) -> DbnState {
        let block = idx / self.block_len;
        let within = idx % self.block_len;
        let meter = self.meter_blocks.partition_point(|&b| b <= block) - 1;
        let beat = block - self.meter_blocks[meter];
        let ti = self.tempo_offsets.partition_point(|&o| o <= within) - 1;
        DbnState {
            meter,
            beat,
            interval: self.intervals[ti],
            phase: within - self.tempo_offsets[ti],
        }
    }

    pub fn states(&self) -> impl Iterator<Item = DbnState> + '_ {
        (0..self.len).map(|i| self.state(i))
    }

    pub fn in_beat_region(&self, s: DbnState) -> bool {
        (s.phase as f64) * self.obs_lambda < s.interval as f64
    }

    pub fn region(&self, s: DbnState) -> Region {
        if !self.in_beat_region(s) {
            Region::NonBeat
        } else if self.joint && s.beat == 0 {
            Region::Downbeat
        } else {
            Region::Beat
        }
    }

    /// Log-probability of a tempo change at a beat boundary.
    pub fn log_tempo_transition(&self, from_interval: usize, to_interval: usize) -> f64 {
        let nt = self.intervals.len();
        let a = from_interval - self.intervals[0];
        let b = to_interval - self.intervals[0];
        self.log_tempo[a * nt + b]
    }

    /// Reachable successors with their transition log-probabilities, in index order.
    pub fn successors(&self, idx: usize) -> Vec<(usize, f64)> {
        let s = self.state(idx);
        if s.phase > 0 {
            return vec![(idx - 1, 0.0)];
        }
        let next_beat = (s.beat + 1) % self.meters[s.meter];
        self.intervals
            .iter()
            .map(|&to| {
                let target = DbnState {
                    meter: s.meter,
                    beat: next_beat,
                    interval: to,
                    phase: to - 1,
                };
                (self.index(target), self.log_tempo_transition(s.interval, to))
            })
            .collect()
    }
}

/// Beat-only observation score of one state.
pub fn observation_logprob(activation: f64, state: DbnState, space: &StateSpace) -> f64 {
    if space.in_beat_region(state) {
        (activation + OBS_EPS).ln()
    } else {
        (1.0 - activation + OBS_EPS).ln()
    }
}

/// Per-frame log-likelihoods for each [`Region`], indexed `[NonBeat, Beat, Downbeat]`.
#[derive(Debug, Clone)]
pub struct Observations {
    scores: Vec<[f64; 3]>,
}

impl Observations {
    pub fn beat_only(activation: &[f64]) -> Self {
        Self {
            scores: activation
                .iter()
                .map(|&a| {
                    let beat = (a + OBS_EPS).ln();
                    [(1.0 - a + OBS_EPS).ln(), beat, beat]
                })
                .collect(),
        }
    }

    pub fn joint(beat: &[f64], down: &[f64]) -> Self {
        Self {
            scores: beat
                .iter()
                .zip(down)
                .map(|(&b, &d)| {
                    [
                        (1.0 - b + OBS_EPS).ln(),
                        (b * (1.0 - d) + OBS_EPS).ln(),
                        (d + OBS_EPS).ln(),
                    ]
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    #[inline]
    pub fn score(&self, frame: usize, region: Region) -> f64 {
        self.scores[frame][region as usize]
    }
}

/// Maximum a-posteriori path under a uniform initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    pub log_prob: f64,
}

/// Viterbi decoding. Ties go to the lowest-indexed predecessor and, at the final frame,
/// to the lowest-indexed state.
pub fn viterbi_path(space: &StateSpace, obs: &Observations) -> ViterbiPath {
    let t_len = obs.len();
    if t_len == 0 {
        return ViterbiPath {
            states: Vec::new(),
            log_prob: 0.0,
        };
    }
    let n = space.len();
    let regions: Vec<Region> = space.states().map(|s| space.region(s)).collect();
    let init = -(n as f64).ln();
    let mut prev: Vec<f64> = (0..n).map(|i| init + obs.score(0, regions[i])).collect();
    let mut cur = vec![0.0; n];

    let nt = space.intervals.len();
    let blocks = space.len / space.block_len;
    // one backpointer (interval index of the predecessor) per frame, block and entry interval
    let mut back: Vec<u16> = Vec::with_capacity((t_len - 1) * blocks * nt);

    // block index of the predecessor for beats entering each block
    let mut pred_block = vec![0; blocks];
    for (m, &b) in space.meters.iter().enumerate() {
        for beat in 0..b {
            let prev_beat = (beat + b - 1) % b;
            pred_block[space.meter_blocks[m] + beat] = space.meter_blocks[m] + prev_beat;
        }
    }

    for frame in 1..t_len {
        for block in 0..blocks {
            let base = block * space.block_len;
            let pbase = pred_block[block] * space.block_len;
            for (ti, &tau) in space.intervals.iter().enumerate() {
                let off = base + space.tempo_offsets[ti];
                for phase in 0..tau - 1 {
                    let i = off + phase;
                    cur[i] = prev[i + 1] + obs.score(frame, regions[i]);
                }
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0usize;
                for (pi, &p_off) in space.tempo_offsets.iter().enumerate() {
                    let v = prev[pbase + p_off] + space.log_tempo[pi * nt + ti];
                    if v > best {
                        best = v;
                        arg = pi;
                    }
                }
                let entry = off + tau - 1;
                cur[entry] = best + obs.score(frame, regions[entry]);
                back.push(arg as u16);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let mut last = 0;
    for (i, &v) in prev.iter().enumerate() {
        if v > prev[last] {
            last = i;
        }
    }
    let log_prob = prev[last];
    let mut states = vec![0; t_len];
    states[t_len - 1] = last;
    let per_frame = blocks * nt;
    for frame in (1..t_len).rev() {
        let idx = states[frame];
        let block = idx / space.block_len;
        let within = idx % space.block_len;
        let ti = space.tempo_offsets.partition_point(|&o| o <= within) - 1;
        let phase = within - space.tempo_offsets[ti];
        states[frame - 1] = if phase + 1 == space.intervals[ti] {
            let pi = back[(frame - 1) * per_frame + block * nt + ti] as usize;
            pred_block[block] * space.block_len + space.tempo_offsets[pi]
        } else {
            idx + 1
        };
    }
    ViterbiPath { states, log_prob }
}

/// Collects one event per beat-region visit that reaches `phi = 0`.
fn extract_beats(space: &StateSpace, path: &[usize], activation: &[f64], cfg: &DbnConfig) -> Result<BeatSequence> {
    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut visit_start: Option<usize> = None;
    for (frame, &idx) in path.iter().enumerate() {
        let s = space.state(idx);
        if !space.in_beat_region(s) {
            visit_start = None;
            continue;
        }
        let start = *visit_start.get_or_insert(frame);
        if s.phase == 0 {
            let chosen = if cfg.refine_to_peak {
                // latest maximum within the visit
                (start..=frame).fold(start, |best, k| if activation[k] >= activation[best] { k } else { best })
            } else {
                frame
            };
            times.push(chosen as f64 / cfg.frame_rate_hz);
            positions.push(s.beat as u32 + 1);
            visit_start = None;
        }
    }
    if space.joint {
        BeatSequence::with_positions(times, positions)
    } else {
        BeatSequence::new(times)
    }
}

fn check_activation(a: &[f64]) -> Result<()> {
    if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("activations must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Beat times from a beat activation curve.
pub fn viterbi_decode(activation: &[f64], cfg: &DbnConfig) -> Result<BeatSequence> {
    check_activation(activation)?;
    let space = StateSpace::from_config(cfg)?;
    let path = viterbi_path(&space, &Observations::beat_only(activation));
    extract_beats(&space, &path.states, activation, cfg)
}

/// Beat times labelled with bar positions (1 = downbeat) from both activation curves.
pub fn joint_downbeat_decode(beat_act: &[f64], down_act: &[f64], cfg: &DbnConfig) -> Result<BeatSequence> {
    if beat_act.len() != down_act.len() {
        return Err(Error::Shape(format!(
            "beat curve has {} frames, downbeat curve {}",
            beat_act.len(),
            down_act.len()
        )));
    }
    check_activation(beat_act)?;
    check_activation(down_act)?;
    let space = StateSpace::joint_from_config(cfg)?;
    let path = viterbi_path(&space, &Observations::joint(beat_act, down_act));
    extract_beats(&space, &path.states, beat_act, cfg)
}
