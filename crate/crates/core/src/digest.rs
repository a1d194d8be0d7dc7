//! Stable SHA-256 digests for configs, corpora and manifests.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of `value`'s JSON form with object keys sorted, so field order in
/// the source struct does not matter.
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("serializable value");
    sha256_hex(canonical.to_string().as_bytes())
}

pub const TOOL_VERSION: &str = concat!("roi ", env!("CARGO_PKG_VERSION"));
