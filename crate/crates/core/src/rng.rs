//! Seeded random streams.
//!
//! Every consumer that needs randomness derives its own ChaCha stream from a
//! run seed and two indices, so results do not depend on evaluation order or
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream `(major, minor)` of the generator seeded with `seed`.
pub fn stream(seed: u64, major: u32, minor: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((major as u64) << 32) | minor as u64);
    rng
}
