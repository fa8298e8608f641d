//! Seeded, counter-derived random substreams.
//!
//! Every stochastic component draws from a ChaCha8 stream whose key is
//! derived from a root seed plus a path of integer ids (model row, sequence
//! id, step index, ...). Substreams are independent of each other and of the
//! order in which they are created, so sequences can run in parallel and
//! still reproduce bit-for-bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream-id namespaces, mixed into the key so different subsystems can
/// never collide on the same substream path.
pub mod tags {
    /// Transition-table rows of a synthetic model.
    pub const MODEL_ROW: u64 = 0x01;
    /// Per-(sequence, step) engine draws.
    pub const SEQUENCE_STEP: u64 = 0x02;
    /// Monte Carlo trial streams.
    pub const EMPIRICAL: u64 = 0x03;
    /// Randomized oracle-suite instances.
    pub const SUITE: u64 = 0x04;
}

// splitmix64 finalizer; full-avalanche mixing of each path component.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the substream of `root_seed` addressed by `path`.
pub fn substream(root_seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = mix(root_seed ^ 0x6a09_e667_f3bc_c908);
    for &id in path {
        state = mix(state ^ mix(id));
    }
    ChaCha8Rng::seed_from_u64(state)
}
