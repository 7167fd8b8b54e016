//! Deterministic RNG substreams.
//!
//! Every random draw in a run comes from a stream derived from
//! `(run_seed, question_id, purpose)`, so per-question results do not
//! depend on scheduling or execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derives an independent RNG stream for one (question, purpose) pair.
pub fn substream(run_seed: u64, question_id: &str, purpose: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update([0]);
    hasher.update(question_id.as_bytes());
    hasher.update([0]);
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}
