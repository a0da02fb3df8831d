//! Seeded random streams.
//!
//! Every shape index gets its own ChaCha8 stream: the key comes from the
//! experiment seed and the stream id is the shape index, so shapes can be
//! generated in any order or in parallel with identical results.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;

pub const GENERATOR_NAME: &str = "rand_chacha::ChaCha8Rng (seed_from_u64, set_stream per shape index)";
pub const GENERATOR_VERSION: &str = "rand_chacha 0.9 / rand_core 0.9";

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct GeneratorInfo {
    pub name: &'static str,
    pub version: &'static str,
}

pub fn generator_info() -> GeneratorInfo {
    GeneratorInfo {
        name: GENERATOR_NAME,
        version: GENERATOR_VERSION,
    }
}

pub fn shape_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform draw in `[0, 1)` from the top 53 bits of one `u64`.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[-delta, delta)`.
pub fn symmetric_f64(rng: &mut impl RngCore, delta: f64) -> f64 {
    delta * (2.0 * unit_f64(rng) - 1.0)
}
