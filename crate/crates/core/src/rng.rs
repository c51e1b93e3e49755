//! Random streams.
//!
//! Every stochastic component draws from its own ChaCha8 stream, selected
//! by `(seed, stream)`. Uniforms are the 53-bit conversion of `rand`'s
//! `Standard` distribution and normals come from the cosine branch of the
//! Box-Muller transform, so a reimplementation only needs ChaCha8 with the
//! same word order to reproduce every sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name recorded in manifests so other implementations can match streams.
pub const PRNG_NAME: &str = "ChaCha8 (rand_chacha 0.3, seed_from_u64 + set_stream) / Box-Muller cosine branch";

/// Well-known stream identifiers.
pub mod streams {
    pub const EXOGENOUS: u64 = 1;
    pub const EXPLORATION: u64 = 2;
    pub const INIT: u64 = 3;
    pub const REPLAY: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const INSTANCES: u64 = 6;
    pub const ROLLOUT: u64 = 7;
}

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; derives independent child seeds from a parent.
pub fn derive_seed(parent: u64, salt: u64) -> u64 {
    let mut z = parent
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draw.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 1 - U maps [0, 1) onto (0, 1], keeping the log finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}
