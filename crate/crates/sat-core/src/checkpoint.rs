//! In-memory checkpoint representation.
//!
//! The binary `SATCKPT1` container (and its byte-exact round-trip guarantees)
//! is implemented in the companion crate; this module only defines what a
//! checkpoint *is*: the spec echo, the named parameter arrays, and training
//! metadata.

use crate::model::{ModelParams, ModelSpec};

/// Provenance recorded alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    /// Number of completed training epochs.
    pub epoch: u32,
    /// Opaque hash of the training configuration that produced the params.
    pub config_hash: u64,
}

/// A trained (or freshly initialized) model ready for persistence.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub meta: TrainMeta,
}

/// FNV-1a over a byte string; used for config hashes in checkpoint metadata.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable() {
        // Reference value for "hello" from the FNV-1a specification.
        assert_eq!(fnv1a64(b"hello"), 0xa430d84680aabd0b);
        assert_ne!(fnv1a64(b"a"), fnv1a64(b"b"));
    }
}
