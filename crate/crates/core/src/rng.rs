//! Counter-based random streams.
//!
//! Every particle owns an independent ChaCha8 stream: key = `seed (LE u64) || domain (LE u64)
//! || 16 zero bytes`, stream id = particle index, word position 0. Draws from a stream depend
//! only on (seed, domain, index), never on thread scheduling.
//!
//! Normals use `rand_distr::StandardNormal` (ziggurat) and exponential clocks use
//! `rand_distr::Exp1`, both from rand_distr 0.5.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Initial law, Brownian increments, jump clocks and realized marks.
pub const DOMAIN_PATH: u64 = 0;
/// Fresh marks used by generator estimates.
pub const DOMAIN_MARKS: u64 = 1;
/// Random perturbation directions.
pub const DOMAIN_POLICY: u64 = 2;

pub fn stream(seed: u64, domain: u64, index: u64) -> Stream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut r = ChaCha8Rng::from_seed(key);
    r.set_stream(index);
    r
}
