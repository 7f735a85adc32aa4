//! Hashing, MACs, hash chains, Merkle trees and hash-based signatures.

pub mod chain;
pub mod hash;
pub mod lamport;
pub mod merkle;
pub mod sig;

use thiserror::Error;

pub use chain::{link_step, verify_seed_closure, verify_step, ChainCursor, HashChain, NextTok};
pub use hash::{hash, hash_encoded, hmac, hmac_verify, prf, ChainSeedKey, Digest, DIGEST_LEN};
pub use lamport::{LamportPublicKey, OtsKeyPair, OtsSignature};
pub use merkle::{merkle_verify, MerkleProof, MerkleTree, Side};
pub use sig::{verify as sig_verify, PublicKey, SchemeId, Signature, SignatureKeyPair};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("hmac key must not be empty")]
    EmptyKey,
    #[error("hash chain length must be at least 1")]
    ZeroLength,
    #[error("merkle tree needs at least one leaf")]
    EmptyLeaves,
    #[error("leaf index {index} out of range for {len} leaves")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("stateful signing key has no one-time leaves left")]
    KeyExhausted,
    #[error("one-time key already used")]
    KeyReuse,
    #[error("unknown signature scheme {0}")]
    UnknownScheme(u64),
    #[error("malformed hex digest")]
    BadHex,
}
