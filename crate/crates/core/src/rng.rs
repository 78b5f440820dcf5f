//! Named, seeded random streams.
//!
//! Every random draw in the crate comes from a stream identified by the
//! master seed, a label and two indices (typically agent id and task
//! counter). Streams are independent of the order in which they are
//! created, so event-driven and threaded runners see the same samples for
//! the same task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Returns the stream `(seed, label, a, b)`.
pub fn named_stream(seed: u64, label: &str, a: u64, b: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(label).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Stream labels used across the crate.
pub mod labels {
    pub const TRAJECTORY: &str = "trajectory";
    pub const COMPUTE: &str = "compute";
    pub const MDP: &str = "mdp";
    pub const NOISE: &str = "noise";
}

/// Samples an index from a discrete distribution given by `probs`.
///
/// `probs` must be nonnegative and sum to one; the last index with positive
/// mass absorbs rounding at the top of the unit interval.
pub fn categorical<R: rand::Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last
}
