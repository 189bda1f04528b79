//! Seeded uniform baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Evidence, QueryScore, StrategyId};
use crate::corpus::TokenSequence;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// A uniform draw in `[0, 1)` determined by the instance id and seed.
pub fn score_random(seq: &TokenSequence, rng_seed: u64) -> QueryScore {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(seq.id().as_bytes()) ^ rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    QueryScore {
        instance_id: seq.id().to_string(),
        strategy: StrategyId::Random,
        score: rng.random::<f64>(),
        evidence: Evidence::Random { seed: rng_seed },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_unlabeled, SubwordSplitter};

    #[test]
    fn seeded_and_distinct() {
        let a = split_unlabeled("a", &["w"], &SubwordSplitter::identity()).unwrap();
        let b = a.clone().with_id("b");
        assert_eq!(score_random(&a, 7), score_random(&a, 7));
        assert_ne!(score_random(&a, 7).score, score_random(&b, 7).score);
        assert_ne!(score_random(&a, 7).score, score_random(&a, 8).score);
        let s = score_random(&a, 1).score;
        assert!((0.0..1.0).contains(&s));
    }
}
