use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shuffles `pieces` items with a seeded generator and deals them round-robin into `k` folds.
/// Returns the fold of each item in input order.
pub fn split_folds(pieces: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("fold count must be positive".into()));
    }
    if pieces < k {
        return Err(Error::TooFewEvents { needed: k, got: pieces });
    }
    let mut order: Vec<usize> = (0..pieces).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; pieces];
    for (rank, &piece) in order.iter().enumerate() {
        folds[piece] = rank % k;
    }
    Ok(folds)
}
