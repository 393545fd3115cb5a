//! Seeded random streams. All randomness in the crate flows through
//! `ChaCha8Rng` instances derived from a session seed, so a seed plus a
//! stream label fully determines every draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed for `(stream, index)` under `seed`.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream as u64)) ^ index)
}

pub fn derived(seed: u64, stream: Stream, index: u64) -> Rng {
    seeded(derive_seed(seed, stream, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Perturbation = 1,
    Pairing = 2,
    Training = 3,
    Init = 4,
    Evaluation = 5,
    Oracle = 6,
}
