//! Seeded random streams.
//!
//! Every source of randomness in a run is derived from a single root seed
//! split into named streams, so that changing e.g. the noise model never
//! perturbs weight initialization. ChaCha8 is used because its output is
//! stable across platforms and library versions.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream names used by the pipeline. Ad-hoc names are allowed; these
/// constants exist so call sites cannot drift apart silently.
pub mod streams {
    pub const INIT_P: &str = "init-p";
    pub const INIT_Q: &str = "init-q";
    pub const NOISE: &str = "noise";
    pub const SHUFFLE: &str = "shuffle";
    pub const PRETEXT: &str = "pretext";
    pub const DATA: &str = "data";
}

/// Derive an independent RNG for `name` from the root seed.
///
/// The stream seed is an FNV-1a hash of the name folded into the root seed,
/// expanded to 256 bits with splitmix64. Distinct names give unrelated
/// streams; the same (seed, name) pair always gives the same stream.
pub fn stream(root_seed: u64, name: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut state = root_seed ^ h;
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        state = splitmix64(&mut state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Fisher-Yates shuffle of `0..n` driven by `rng`.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
