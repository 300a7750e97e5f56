//! Seed plumbing. Every random decision in the crate draws from a
//! [`ChaCha8Rng`] derived from one root seed and a path of labels, so any
//! stage can be re-run on its own and reproduce the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix_label(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded into the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(seed ^ h)
}

/// Seed of the named substream of `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    mix_label(seed, label)
}

/// Seed of the substream indexed by `parts` (e.g. `[epoch, sample]`).
pub fn derive_indexed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(seed), |acc, p| splitmix(acc ^ splitmix(*p)))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Named substream, e.g. `stream(root, "pretrain")`.
pub fn stream(seed: u64, label: &str) -> Rng {
    seeded(derive_seed(seed, label))
}

/// Per-sample stream derived from `(seed, epoch, index)`.
pub fn sample_stream(seed: u64, epoch: u64, index: u64) -> Rng {
    seeded(derive_indexed(seed, &[epoch, index]))
}
