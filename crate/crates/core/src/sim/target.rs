use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenId;

/// Seed for the random stream at `(seed, a, b, salt)`, so every position
/// draws the same value however often and in whatever order it is asked.
pub(crate) fn stream_key(seed: u64, a: u64, b: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ a.wrapping_add(1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ b.wrapping_add(1).wrapping_mul(0x1656_67B1_9E37_79F9)
        ^ salt.wrapping_mul(0xD6E8_FEB8_6659_FD93)
}

/// Token uniformly drawn from `0..vocab` excluding `avoid`.
pub(crate) fn other_token(rng: &mut ChaCha8Rng, avoid: TokenId, vocab: u32) -> TokenId {
    let r = rng.random_range(0..vocab.max(2) - 1);
    if r >= avoid {
        r + 1
    } else {
        r
    }
}

/// Stand-in for the target model: replays a reference sequence per request,
/// replacing each token with a different random one at `divergence_rate`.
#[derive(Debug, Clone)]
pub struct MockTarget {
    references: Vec<Vec<TokenId>>,
    divergence_rate: f64,
    seed: u64,
    vocab: u32,
}

/// Outcome of verifying one draft.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub accepted: usize,
    /// Target tokens produced by the pass: the accepted prefix plus the
    /// corrected token, unless the request ended first.
    pub emitted: Vec<TokenId>,
}

impl MockTarget {
    pub fn new(references: Vec<Vec<TokenId>>, divergence_rate: f64, seed: u64, vocab: u32) -> Self {
        Self {
            references,
            divergence_rate: divergence_rate.clamp(0.0, 1.0),
            seed,
            vocab: vocab.max(2),
        }
    }

    pub fn request_count(&self) -> usize {
        self.references.len()
    }

    pub fn len(&self, request: usize) -> usize {
        self.references[request].len()
    }

    pub fn divergence_rate(&self) -> f64 {
        self.divergence_rate
    }

    /// Token at `position`, or `None` past the end of the request.
    pub fn target_next(&self, request: usize, position: usize) -> Option<TokenId> {
        let reference = *self.references[request].get(position)?;
        if self.divergence_rate == 0.0 {
            return Some(reference);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(self.seed, request as u64, position as u64, 1));
        if rng.random_bool(self.divergence_rate) {
            Some(other_token(&mut rng, reference, self.vocab))
        } else {
            Some(reference)
        }
    }

    /// Accepts the longest prefix of `draft` that agrees with the target from
    /// `position` on; the first disagreeing target token is emitted as well.
    pub fn verify_draft(&self, request: usize, position: usize, draft: &[TokenId]) -> Verification {
        let mut emitted = Vec::with_capacity(draft.len() + 1);
        for (j, &t) in draft.iter().enumerate() {
            match self.target_next(request, position + j) {
                Some(x) if x == t => emitted.push(x),
                Some(x) => {
                    emitted.push(x);
                    return Verification { accepted: j, emitted };
                }
                None => return Verification { accepted: j, emitted },
            }
        }
        let accepted = emitted.len();
        if let Some(x) = self.target_next(request, position + accepted) {
            emitted.push(x);
        }
        Verification { accepted, emitted }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_divergence_replays() {
        let t = MockTarget::new(vec![vec![4, 5, 6]], 0.0, 1, 100);
        assert_eq!((0..3).map(|p| t.target_next(0, p).unwrap()).collect::<Vec<_>>(), vec![4, 5, 6]);
        assert_eq!(t.target_next(0, 3), None);
    }

    #[test]
    fn full_divergence_never_replays() {
        let reference: Vec<TokenId> = (0..500).map(|i| i % 7).collect();
        let t = MockTarget::new(vec![reference.clone()], 1.0, 3, 8);
        for (p, &r) in reference.iter().enumerate() {
            let x = t.target_next(0, p).unwrap();
            assert_ne!(x, r);
            assert!(x < 8);
        }
    }

    #[test]
    fn empirical_divergence_rate() {
        let n = 100_000;
        let t = MockTarget::new(vec![vec![7; n]], 0.2, 11, 32_000);
        let diverged = (0..n).filter(|&p| t.target_next(0, p) != Some(7)).count();
        let rate = diverged as f64 / n as f64;
        assert!((rate - 0.2).abs() < 0.01, "{rate}");
    }

    #[test]
    fn deterministic_per_position() {
        let t = MockTarget::new(vec![(0..50).collect()], 0.5, 9, 1000);
        let a: Vec<_> = (0..50).map(|p| t.target_next(0, p)).collect();
        let b: Vec<_> = (0..50).rev().map(|p| t.target_next(0, p)).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn verification_examples() {
        let t = MockTarget::new(vec![vec![1, 9, 3, 4]], 0.0, 0, 100);
        assert_eq!(t.verify_draft(0, 0, &[]), Verification { accepted: 0, emitted: vec![1] });
        assert_eq!(t.verify_draft(0, 0, &[1, 9, 3]), Verification { accepted: 3, emitted: vec![1, 9, 3, 4] });
        // draft [a, b, c] against [a, x, ...]
        assert_eq!(t.verify_draft(0, 0, &[1, 2, 3]), Verification { accepted: 1, emitted: vec![1, 9] });
        // running off the end: no corrected token
        assert_eq!(t.verify_draft(0, 2, &[3, 4, 5]), Verification { accepted: 2, emitted: vec![3, 4] });
    }
}
