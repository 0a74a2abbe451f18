mod common;

use beatagg::metrics::{
    aml_scores, continuity_scores, evaluate_dataset, evaluate_pair, f_measure, match_count, metric_variations,
    EvalConfig,
};
use beatagg::BeatSequence;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seq(t: Vec<f64>) -> BeatSequence {
    BeatSequence::new(t).unwrap()
}

fn sorted_times() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..20.0, 0..30).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    })
}

#[test]
fn greedy_matching_is_maximum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let ne = rng.random_range(0..=12);
        let nr = rng.random_range(0..=12);
        let est = common::random_times(&mut rng, ne, 3.0, 1e-3);
        let reference = common::random_times(&mut rng, nr, 3.0, 1e-3);
        let w = rng.random_range(0.01..0.3);
        assert_eq!(match_count(&est, &reference, w), common::max_matching(&est, &reference, w));
    }
}

#[test]
fn continuity_matches_run_scanner() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..2000 {
        let period = rng.random_range(0.3..0.9);
        let nr = rng.random_range(2..15);
        let reference: Vec<f64> = (0..nr).map(|i| 1.0 + i as f64 * period + rng.random_range(-0.02..0.02)).collect();
        let mut est = Vec::new();
        for t in &reference {
            if rng.random_bool(0.85) {
                est.push(t + rng.random_range(-0.15..0.15) * period);
            }
        }
        est.dedup_by(|a, b| *a <= *b);
        let got = continuity_scores(&seq(est.clone()), &seq(reference.clone())).unwrap();
        let want = common::continuity_reference(&est, &reference, 0.175);
        assert_eq!(got, want);
    }
}

#[test]
fn every_other_beat_scores_zero_at_correct_level() {
    for n in [4usize, 9, 20] {
        let reference: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
        let est: Vec<f64> = reference.iter().step_by(2).copied().collect();
        let (c, t) = continuity_scores(&seq(est.clone()), &seq(reference.clone())).unwrap();
        assert_eq!((c, t), (0.0, 0.0));
        assert_eq!(common::continuity_reference(&est, &reference, 0.175), (0.0, 0.0));
    }
}

#[test]
fn variants_score_perfectly_against_themselves() {
    let reference = seq((0..12).map(|i| 0.3 + i as f64 * 0.45).collect());
    for v in metric_variations(&reference).unwrap() {
        assert_eq!(continuity_scores(&v, &v).unwrap(), (1.0, 1.0));
    }
}

#[test]
fn single_piece_aggregate_equals_report() {
    let r = seq((0..30).map(|i| i as f64 * 0.5).collect());
    let e = seq((0..30).map(|i| i as f64 * 0.5 + 0.03).collect());
    let cfg = EvalConfig::default();
    let one = evaluate_pair(&e, &r, &cfg).unwrap();
    let agg = evaluate_dataset(&[("x".into(), e, r)], &cfg).unwrap();
    assert_eq!(agg.mean, one);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn self_match_is_perfect(x in sorted_times()) {
        prop_assume!(!x.is_empty());
        let s = seq(x);
        prop_assert_eq!(f_measure(&s, &s, 0.07).f_measure, 1.0);
    }

    #[test]
    fn f_measure_grows_with_window(e in sorted_times(), r in sorted_times(), w1 in 0.0f64..0.5, w2 in 0.0f64..0.5) {
        let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
        let (e, r) = (seq(e), seq(r));
        prop_assert!(f_measure(&e, &r, lo).f_measure <= f_measure(&e, &r, hi).f_measure);
    }

    #[test]
    fn ordering_invariants(e in sorted_times(), r in sorted_times()) {
        prop_assume!(r.len() >= 2);
        let (e, r) = (seq(e), seq(r));
        let (cc, ct) = continuity_scores(&e, &r).unwrap();
        let (ac, at) = aml_scores(&e, &r).unwrap();
        prop_assert!(cc <= ct && ct <= at && cc <= ac && ac <= at);
        prop_assert!((0.0..=1.0).contains(&cc) && (0.0..=1.0).contains(&at));
    }
}
