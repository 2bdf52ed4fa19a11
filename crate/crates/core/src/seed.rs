//! Seed discipline.
//!
//! A single root seed is split into named streams (`gen`, `train`, `test`,
//! `ransac`, `kmeans`, ...) and each stream is split again by index:
//!
//! ```text
//! stream(root, name)   = splitmix64(root ^ fnv1a64(name))
//! child(stream, index) = splitmix64(stream + (index + 1) * 0x9E3779B97F4A7C15)
//! ```
//!
//! Every RNG in the crate is a ChaCha8 generator seeded from one of these
//! values, so results do not depend on thread scheduling or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed of the named stream under `root`.
pub fn stream(root: u64, name: &str) -> u64 {
    splitmix64(root ^ fnv1a64(name))
}

/// Seed of the `index`-th child of `parent`.
pub fn child(parent: u64, index: u64) -> u64 {
    splitmix64(parent.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
