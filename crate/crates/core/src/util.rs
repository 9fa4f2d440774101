//! Small shared helpers: stable hashing and deterministic RNG construction.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit hash. Stable across builds and platforms, unlike the
/// std `DefaultHasher`, so it is safe to persist in manifests and
/// checkpoints.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Hash a list of strings with length framing so ["ab","c"] != ["a","bc"].
pub fn fnv1a_strings<S: AsRef<str>>(items: &[S]) -> u64 {
    let mut buf = Vec::new();
    for it in items {
        let s = it.as_ref().as_bytes();
        buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
        buf.extend_from_slice(s);
    }
    fnv1a(&buf)
}

/// Deterministic RNG for a (seed, stream) pair. Distinct streams keep
/// e.g. data generation and weight init independent of each other.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
