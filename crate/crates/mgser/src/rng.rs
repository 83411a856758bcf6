//! Deterministic seeded RNG used by every stochastic code path.

pub use rand::Rng as RngCore;
use rand::SeedableRng;

/// The one RNG type threaded through the crate. ChaCha gives identical
/// streams across platforms for a given seed.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
