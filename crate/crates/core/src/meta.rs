//! Provenance stamped into every output file: crate version, seed and a config hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Short hex digest of the canonical JSON encoding of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize infallibly");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new<T: Serialize + ?Sized>(seed: u64, config: &T) -> Self {
        Self {
            version: VERSION.to_string(),
            seed,
            config_hash: config_hash(config),
        }
    }
}
