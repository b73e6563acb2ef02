//! Seeding conventions.
//!
//! Every run owns a ChaCha8 generator keyed by its 64-bit seed. ChaCha is a
//! counter-based generator, so independent sequences come from separate stream
//! ids under the same key rather than from re-seeding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TRAJECTORY_STREAM: u64 = 0;
pub const OUTPUT_INDEX_STREAM: u64 = 1;
pub const PROBE_STREAM: u64 = 2;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of run `run_index` in a sweep with base seed `base`.
pub fn derive_seed(base: u64, run_index: u64) -> u64 {
    base ^ run_index
}
