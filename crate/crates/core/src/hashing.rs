//! Small keyed-hash helpers shared by the mock backend, mock embedder,
//! caches and per-replicate RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SHA-256 over a sequence of length-prefixed parts.
pub fn digest_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

pub fn hex_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable hex key for a text, used by the embedding cache.
pub fn text_hash(text: &str) -> String {
    hex_digest(text.as_bytes())
}

/// Deterministic RNG stream for `(master seed, label, index)`.
pub fn stream_rng(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    let seed = digest_parts([
        &master.to_le_bytes()[..],
        label.as_bytes(),
        &index.to_le_bytes()[..],
    ]);
    ChaCha8Rng::from_seed(seed)
}

/// A u64 seed derived from a master seed and a label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let d = digest_parts([&master.to_le_bytes()[..], label.as_bytes()]);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
