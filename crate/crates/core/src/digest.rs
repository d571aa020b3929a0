use alloc::string::String;
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 over `parts`, each part length-prefixed so that
/// distinct part boundaries never collide.
pub(crate) fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}
