//! SHA-256 helpers for content-addressed artifacts.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short prefix used in file names.
pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(16)]
}

/// Hash of a value's JSON encoding. Struct fields serialize in declaration
/// order and maps should be `BTreeMap`s, so the encoding is canonical.
pub fn json_hash<T: serde::Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable value"))
}
