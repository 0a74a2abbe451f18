mod common;

use beatagg::classifier::widen_labels;
use beatagg::FrameTargets;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn widening_matches_distance_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let t = rng.random_range(1..200);
        let mut frames: Vec<usize> = (0..rng.random_range(0..20)).map(|_| rng.random_range(0..t)).collect();
        frames.sort_unstable();
        frames.dedup();
        assert_eq!(widen_labels(&frames, t).unwrap(), common::widen_reference(&frames, t));
    }
}

#[test]
fn isolated_beat_pattern() {
    let w = widen_labels(&[5], 11).unwrap();
    assert_eq!(w, vec![0.0, 0.0, 0.0, 0.25, 0.5, 1.0, 0.5, 0.25, 0.0, 0.0, 0.0]);
    let edge = widen_labels(&[0, 10], 11).unwrap();
    assert_eq!(&edge[..3], &[1.0, 0.5, 0.25]);
    assert_eq!(&edge[8..], &[0.25, 0.5, 1.0]);
    let targets = FrameTargets::from_frames(&[2], &[], 5).unwrap();
    assert_eq!(targets.downbeat, vec![0.0; 5]);
}
