//! Deterministic random streams keyed by (seed, domain, key).
//!
//! Each stream seed is `SHA-256(domain || 0x00 || seed as u64 LE || key)`.
//! Streams for different images never share state, so per-image work can run
//! in any order and still produce identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream_seed(seed: u64, domain: &str, key: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    h.update(key);
    let digest = h.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

pub fn stream_rng(seed: u64, domain: &str, key: &[u8]) -> StreamRng {
    ChaCha8Rng::from_seed(stream_seed(seed, domain, key))
}

/// A uniform draw in `[0, 1)` from the first 8 digest bytes (top 53 bits).
pub fn unit_draw(seed: u64, domain: &str, key: &[u8]) -> f64 {
    let digest = stream_seed(seed, domain, key);
    let word = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (word >> 11) as f64 / (1u64 << 53) as f64
}
