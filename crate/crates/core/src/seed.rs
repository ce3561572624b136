//! Deterministic seeding and content hashing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::domain::canonical_json;
use crate::Result;

/// Derives a 64-bit seed from a base seed and a list of labels, so that
/// every (seed, user, position, purpose) tuple gets an independent stream.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

pub fn rng_for(base: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short hash of a value's canonical JSON form; used to name runs and to
/// detect config drift on resume.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = canonical_json(value)?;
    Ok(sha256_hex(json.as_bytes())[..16].to_string())
}
