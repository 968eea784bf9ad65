//! Seeded RNG streams.
//!
//! Every stochastic component draws from a ChaCha stream derived from
//! (seed, tag). Streams with distinct tags never overlap, so adding a new
//! consumer cannot shift the draws of an existing one — the property the
//! bit-identical replay contract rests on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic ChaCha stream for a (seed, purpose) pair.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(tag.as_bytes()));
    rng
}

/// Mixes a purpose tag into a seed, for deriving child seeds.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    seed ^ fnv1a(tag.as_bytes())
}

/// FNV-1a over the tag bytes; stable across platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Standard normal draw.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    rng.sample(rand_distr::StandardNormal)
}
