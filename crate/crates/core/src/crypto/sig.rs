//! Stateful hash-based signatures: a Merkle tree over `2^h` Lamport leaf
//! keys, each used once, in order.

use rand::{CryptoRng, RngCore};

use super::hash::{hash, hash_encoded, Digest};
use super::lamport::{decode_digest_block, encode_digest_block, LamportPublicKey, LamportSeed, LAMPORT_BITS};
use super::merkle::{MerkleProof, MerkleTree, Side};
use super::CryptoError;
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};

pub const DEFAULT_HEIGHT: u8 = 8;
pub const MAX_HEIGHT: u8 = 20;
const MERKLE_LAMPORT_CODE: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeId {
    MerkleLamport { height: u8 },
}

impl SchemeId {
    pub fn merkle_lamport(height: u8) -> Self {
        SchemeId::MerkleLamport { height }
    }

    pub fn from_code(code: u64, param: u64) -> Result<Self, CryptoError> {
        match code {
            MERKLE_LAMPORT_CODE if param <= u64::from(MAX_HEIGHT) => {
                Ok(SchemeId::MerkleLamport { height: param as u8 })
            }
            _ => Err(CryptoError::UnknownScheme(code)),
        }
    }

    fn code(&self) -> (u64, u64) {
        match self {
            SchemeId::MerkleLamport { height } => (MERKLE_LAMPORT_CODE, u64::from(*height)),
        }
    }

    pub fn capacity(&self) -> u64 {
        match self {
            SchemeId::MerkleLamport { height } => 1u64 << height,
        }
    }
}

impl Default for SchemeId {
    fn default() -> Self {
        SchemeId::MerkleLamport { height: DEFAULT_HEIGHT }
    }
}

impl Encode for SchemeId {
    fn encode_fields(&self, enc: &mut Encoder) {
        let (code, param) = self.code();
        enc.u64(code).u64(param);
    }
}

impl Decode for SchemeId {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let code = dec.u64()?;
        let param = dec.u64()?;
        SchemeId::from_code(code, param).map_err(|_| DecodeError::Invalid("signature scheme"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PublicKey {
    pub scheme: SchemeId,
    pub root: Digest,
}

impl Encode for PublicKey {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.value(&self.scheme).value(&self.root);
    }
}

impl Decode for PublicKey {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(PublicKey { scheme: dec.value()?, root: dec.value()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub scheme: SchemeId,
    pub leaf: u64,
    revealed: Vec<Digest>,
    complement: Vec<Digest>,
    auth_path: Vec<Digest>,
}

impl Signature {
    /// Stand-in used while the enclosing message is being signed.
    pub(crate) fn blank() -> Self {
        Signature {
            scheme: SchemeId::default(),
            leaf: 0,
            revealed: Vec::new(),
            complement: Vec::new(),
            auth_path: Vec::new(),
        }
    }

    /// Octets on the wire.
    pub fn encoded_len(&self) -> usize {
        self.to_canonical().len()
    }
}

impl Encode for Signature {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.value(&self.scheme).u64(self.leaf);
        encode_digest_block(enc, &self.revealed);
        encode_digest_block(enc, &self.complement);
        enc.list(&self.auth_path);
    }
}

impl Decode for Signature {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Signature {
            scheme: dec.value()?,
            leaf: dec.u64()?,
            revealed: decode_digest_block(dec, LAMPORT_BITS)?,
            complement: decode_digest_block(dec, LAMPORT_BITS)?,
            auth_path: dec.list()?,
        })
    }
}

fn leaf_seed(master: &Digest, leaf: u64) -> LamportSeed {
    let mut enc = Encoder::new();
    enc.str("mss-leaf").bytes(master.as_bytes()).u64(leaf);
    LamportSeed(hash_encoded(enc))
}

/// Signing key plus its public half. Signing consumes one leaf; the key
/// must be used by a single writer.
pub struct SignatureKeyPair {
    scheme: SchemeId,
    master: Digest,
    tree: MerkleTree,
    next_leaf: u64,
    public: PublicKey,
}

impl std::fmt::Debug for SignatureKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SignatureKeyPair")
            .field("public", &self.public)
            .field("uses_remaining", &self.uses_remaining())
            .finish()
    }
}

impl SignatureKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(scheme: SchemeId, rng: &mut R) -> Result<Self, CryptoError> {
        let SchemeId::MerkleLamport { height } = scheme;
        if height > MAX_HEIGHT {
            return Err(CryptoError::UnknownScheme(MERKLE_LAMPORT_CODE));
        }
        let master = Digest::random(rng);
        let leaves: Vec<Digest> =
            (0..scheme.capacity()).map(|i| leaf_seed(&master, i).public_key().digest()).collect();
        let tree = MerkleTree::build(&leaves)?;
        let public = PublicKey { scheme, root: tree.root() };
        Ok(SignatureKeyPair { scheme, master, tree, next_leaf: 0, public })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn uses_remaining(&self) -> u64 {
        self.scheme.capacity() - self.next_leaf
    }

    pub fn next_leaf(&self) -> u64 {
        self.next_leaf
    }

    /// Moves the leaf counter forward (never back), e.g. when restoring
    /// from a log that recorded signatures already issued.
    pub fn advance_to(&mut self, leaf: u64) {
        self.next_leaf = self.next_leaf.max(leaf.min(self.scheme.capacity()));
    }

    pub fn sign(&mut self, message: &[u8]) -> Result<Signature, CryptoError> {
        if self.next_leaf >= self.scheme.capacity() {
            return Err(CryptoError::KeyExhausted);
        }
        let leaf = self.next_leaf;
        self.next_leaf += 1;
        let seed = leaf_seed(&self.master, leaf);
        let d = hash(message);
        let revealed = seed.sign_digest(&d);
        let complement = seed.public_key().complement_for(&d);
        let proof = self.tree.prove(leaf as usize)?;
        let auth_path = proof.siblings.into_iter().map(|(s, _)| s).collect();
        Ok(Signature { scheme: self.scheme, leaf, revealed, complement, auth_path })
    }
}

pub fn verify(pk: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    let SchemeId::MerkleLamport { height } = pk.scheme;
    if sig.scheme != pk.scheme || sig.leaf >= pk.scheme.capacity() || sig.auth_path.len() != height as usize {
        return false;
    }
    let d = hash(message);
    let Some(leaf_digest) = LamportPublicKey::digest_from_parts(&d, &sig.revealed, &sig.complement) else {
        return false;
    };
    let siblings = sig
        .auth_path
        .iter()
        .enumerate()
        .map(|(level, s)| (*s, if (sig.leaf >> level) & 1 == 1 { Side::Left } else { Side::Right }))
        .collect();
    let proof = MerkleProof { leaf_index: sig.leaf, siblings };
    proof.implied_root(&leaf_digest).is_some_and(|r| r == pk.root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn height_two_signs_four_times() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut kp = SignatureKeyPair::generate(SchemeId::merkle_lamport(2), &mut rng).unwrap();
        for i in 0..4u8 {
            let sig = kp.sign(&[i]).unwrap();
            assert!(verify(kp.public_key(), &[i], &sig));
            assert!(!verify(kp.public_key(), &[i, 0], &sig));
        }
        assert_eq!(kp.uses_remaining(), 0);
        assert_eq!(kp.sign(b"x").unwrap_err(), CryptoError::KeyExhausted);
    }

    #[test]
    fn unknown_scheme_code() {
        assert_eq!(SchemeId::from_code(7, 4).unwrap_err(), CryptoError::UnknownScheme(7));
        assert!(SchemeId::from_code(1, 21).is_err());
    }

    #[test]
    fn signature_roundtrips_and_wrong_key_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let mut a = SignatureKeyPair::generate(SchemeId::merkle_lamport(1), &mut rng).unwrap();
        let b = SignatureKeyPair::generate(SchemeId::merkle_lamport(1), &mut rng).unwrap();
        let sig = a.sign(b"m").unwrap();
        let back = Signature::from_canonical(&sig.to_canonical()).unwrap();
        assert_eq!(back, sig);
        assert!(!verify(b.public_key(), b"m", &sig));
    }

    #[test]
    fn advance_never_moves_backwards() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut kp = SignatureKeyPair::generate(SchemeId::merkle_lamport(2), &mut rng).unwrap();
        kp.advance_to(3);
        kp.advance_to(1);
        assert_eq!(kp.next_leaf(), 3);
        assert_eq!(kp.uses_remaining(), 1);
    }
}
