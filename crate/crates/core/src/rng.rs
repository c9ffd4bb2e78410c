//! Deterministic randomness plumbing.
//!
//! Reproducibility contract: a run is a pure function of its seed. Every
//! stochastic subsystem (wind, each sensor, vision noise, ...) draws from its
//! own stream derived from the run seed and a stable label, so adding a
//! consumer or reordering draws inside one subsystem never perturbs another.
//! Streams use ChaCha8, which is seekable, portable, and fast enough to be
//! invisible next to the physics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One step of the splitmix64 generator.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    mix64(*state)
}

/// The i-th output of splitmix64 seeded with `master`, in constant time.
///
/// Used to hand independent seeds to Monte Carlo runs: run `i` behaves
/// identically whether runs execute in order, in parallel, or alone.
pub fn run_seed(master: u64, run_index: u64) -> u64 {
    mix64(master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(run_index.wrapping_add(1))))
}

/// FNV-1a. Stable across platforms and compiler versions, unlike
/// `DefaultHasher`.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A named ChaCha8 stream for one subsystem of one run.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut state = seed ^ label_hash(label);
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
