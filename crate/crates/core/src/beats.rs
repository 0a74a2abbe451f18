use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Event times in seconds, strictly increasing, with optional metrical positions (1 = downbeat).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BeatSequence {
    times: Vec<f64>,
    positions: Option<Vec<u32>>,
}

fn check_times(times: &[f64]) -> Result<()> {
    if let Some(bad) = times.iter().position(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidInput(format!(
            "event {bad} has invalid time {}",
            times[bad]
        )));
    }
    if let Some(i) = times.windows(2).position(|w| w[0] >= w[1]) {
        return Err(Error::Unsorted { index: i + 1 });
    }
    Ok(())
}

impl BeatSequence {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        check_times(&times)?;
        Ok(Self {
            times,
            positions: None,
        })
    }

    pub fn with_positions(times: Vec<f64>, positions: Vec<u32>) -> Result<Self> {
        check_times(&times)?;
        if positions.len() != times.len() {
            return Err(Error::Shape(format!(
                "{} times but {} positions",
                times.len(),
                positions.len()
            )));
        }
        if positions.contains(&0) {
            return Err(Error::InvalidInput("metrical positions start at 1".into()));
        }
        Ok(Self {
            times,
            positions: Some(positions),
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> Option<&[u32]> {
        self.positions.as_deref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Events at position 1. Without position labels there are no downbeats.
    pub fn downbeats(&self) -> BeatSequence {
        let times = match &self.positions {
            Some(pos) => self
                .times
                .iter()
                .zip(pos)
                .filter(|(_, &p)| p == 1)
                .map(|(&t, _)| t)
                .collect(),
            None => Vec::new(),
        };
        BeatSequence {
            times,
            positions: None,
        }
    }

    /// Drops events earlier than `min_time` seconds.
    pub fn trimmed(&self, min_time: f64) -> BeatSequence {
        let start = self.times.partition_point(|&t| t < min_time);
        BeatSequence {
            times: self.times[start..].to_vec(),
            positions: self.positions.as_ref().map(|p| p[start..].to_vec()),
        }
    }

    /// Frame indices `round(time * fps)`, deduplicated, limited to `0..frames`.
    pub fn to_frames(&self, frame_rate_hz: f64, frames: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .times
            .iter()
            .map(|&t| (t * frame_rate_hz).round() as usize)
            .filter(|&k| k < frames)
            .collect();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_order_and_positions() {
        assert!(BeatSequence::new(vec![0.5, 0.5]).is_err());
        assert!(BeatSequence::new(vec![-0.1, 0.5]).is_err());
        assert!(BeatSequence::with_positions(vec![0.5, 1.0], vec![1]).is_err());
        assert!(BeatSequence::with_positions(vec![0.5, 1.0], vec![0, 1]).is_err());
    }

    #[test]
    fn downbeats_and_trim() {
        let s = BeatSequence::with_positions(vec![4.0, 4.5, 5.0, 5.5, 6.0], vec![1, 2, 3, 1, 2]).unwrap();
        assert_eq!(s.downbeats().times(), &[4.0, 5.5]);
        let t = s.trimmed(5.0);
        assert_eq!(t.times(), &[5.0, 5.5, 6.0]);
        assert_eq!(t.positions().unwrap(), &[3, 1, 2]);
        assert!(BeatSequence::new(vec![1.0]).unwrap().downbeats().is_empty());
    }

    #[test]
    fn frames_are_rounded_and_clipped() {
        let s = BeatSequence::new(vec![0.0, 0.104, 0.106, 2.0]).unwrap();
        assert_eq!(s.to_frames(10.0, 15), vec![0, 1]);
    }
}
