//! Lamport one-time signatures over the SHA-256 digest of the message.

use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};

use super::hash::{hash, hash_encoded, Digest, DIGEST_LEN};
use super::CryptoError;
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};

pub const LAMPORT_BITS: usize = 256;

/// Deterministic secret material: element `(i, b)` is derived from a seed.
#[derive(Clone)]
pub(crate) struct LamportSeed(pub(crate) Digest);

impl LamportSeed {
    fn element(&self, i: usize, b: bool) -> Digest {
        let mut enc = Encoder::new();
        enc.str("lamport-sk").bytes(self.0.as_bytes()).u64(i as u64).bool(b);
        hash_encoded(enc)
    }

    pub(crate) fn public_key(&self) -> LamportPublicKey {
        let pairs = (0..LAMPORT_BITS)
            .map(|i| [hash(self.element(i, false).as_bytes()), hash(self.element(i, true).as_bytes())])
            .collect();
        LamportPublicKey { pairs }
    }

    pub(crate) fn sign_digest(&self, msg_digest: &Digest) -> Vec<Digest> {
        (0..LAMPORT_BITS).map(|i| self.element(i, msg_digest.bit(i))).collect()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct LamportPublicKey {
    pairs: Vec<[Digest; 2]>,
}

impl std::fmt::Debug for LamportPublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LamportPublicKey({:?})", self.digest())
    }
}

impl LamportPublicKey {
    /// Compact commitment to the whole key, used as a Merkle leaf.
    pub fn digest(&self) -> Digest {
        let mut h = Sha256::new();
        h.update(b"lamport-pk");
        for [a, b] in &self.pairs {
            h.update(a.as_bytes());
            h.update(b.as_bytes());
        }
        Digest(h.finalize().into())
    }

    pub fn verify(&self, message: &[u8], sig: &OtsSignature) -> bool {
        let d = hash(message);
        sig.revealed.len() == LAMPORT_BITS
            && sig
                .revealed
                .iter()
                .enumerate()
                .all(|(i, r)| hash(r.as_bytes()) == self.pairs[i][usize::from(d.bit(i))])
    }

    /// Rebuilds the public-key digest from revealed preimages and the
    /// complementary public halves.
    pub(crate) fn digest_from_parts(msg_digest: &Digest, revealed: &[Digest], complement: &[Digest]) -> Option<Digest> {
        if revealed.len() != LAMPORT_BITS || complement.len() != LAMPORT_BITS {
            return None;
        }
        let mut h = Sha256::new();
        h.update(b"lamport-pk");
        for i in 0..LAMPORT_BITS {
            let opened = hash(revealed[i].as_bytes());
            let (zero, one) = if msg_digest.bit(i) { (&complement[i], &opened) } else { (&opened, &complement[i]) };
            h.update(zero.as_bytes());
            h.update(one.as_bytes());
        }
        Some(Digest(h.finalize().into()))
    }

    pub(crate) fn complement_for(&self, msg_digest: &Digest) -> Vec<Digest> {
        (0..LAMPORT_BITS).map(|i| self.pairs[i][usize::from(!msg_digest.bit(i))]).collect()
    }
}

fn encode_digests(enc: &mut Encoder, ds: &[Digest]) {
    let mut flat = Vec::with_capacity(ds.len() * DIGEST_LEN);
    for d in ds {
        flat.extend_from_slice(d.as_bytes());
    }
    enc.bytes(&flat);
}

fn decode_digests(dec: &mut Decoder<'_>, count: usize) -> Result<Vec<Digest>, DecodeError> {
    let raw = dec.bytes()?;
    if raw.len() != count * DIGEST_LEN {
        return Err(DecodeError::Width { expected: count * DIGEST_LEN, got: raw.len() });
    }
    Ok(raw.chunks_exact(DIGEST_LEN).map(|c| Digest(c.try_into().unwrap())).collect())
}

pub(crate) fn encode_digest_block(enc: &mut Encoder, ds: &[Digest]) {
    encode_digests(enc, ds)
}

pub(crate) fn decode_digest_block(dec: &mut Decoder<'_>, count: usize) -> Result<Vec<Digest>, DecodeError> {
    decode_digests(dec, count)
}

impl Encode for LamportPublicKey {
    fn encode_fields(&self, enc: &mut Encoder) {
        let zeros: Vec<Digest> = self.pairs.iter().map(|p| p[0]).collect();
        let ones: Vec<Digest> = self.pairs.iter().map(|p| p[1]).collect();
        encode_digests(enc, &zeros);
        encode_digests(enc, &ones);
    }
}

impl Decode for LamportPublicKey {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let zeros = decode_digests(dec, LAMPORT_BITS)?;
        let ones = decode_digests(dec, LAMPORT_BITS)?;
        Ok(LamportPublicKey { pairs: zeros.into_iter().zip(ones).map(|(a, b)| [a, b]).collect() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtsSignature {
    pub revealed: Vec<Digest>,
}

impl Encode for OtsSignature {
    fn encode_fields(&self, enc: &mut Encoder) {
        encode_digests(enc, &self.revealed);
    }
}

impl Decode for OtsSignature {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(OtsSignature { revealed: decode_digests(dec, LAMPORT_BITS)? })
    }
}

/// A Lamport key pair that refuses to sign twice.
pub struct OtsKeyPair {
    seed: LamportSeed,
    public: LamportPublicKey,
    used: bool,
}

impl OtsKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let seed = LamportSeed(Digest::random(rng));
        let public = seed.public_key();
        OtsKeyPair { seed, public, used: false }
    }

    pub fn public_key(&self) -> &LamportPublicKey {
        &self.public
    }

    pub fn is_used(&self) -> bool {
        self.used
    }

    pub fn sign(&mut self, message: &[u8]) -> Result<OtsSignature, CryptoError> {
        if self.used {
            return Err(CryptoError::KeyReuse);
        }
        self.used = true;
        Ok(OtsSignature { revealed: self.seed.sign_digest(&hash(message)) })
    }
}

impl std::fmt::Debug for OtsKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OtsKeyPair").field("public", &self.public).field("used", &self.used).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sign_verify_and_reuse() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut kp = OtsKeyPair::generate(&mut rng);
        let sig = kp.sign(b"terminal").unwrap();
        assert!(kp.public_key().verify(b"terminal", &sig));
        assert!(!kp.public_key().verify(b"terminal\0", &sig));
        assert_eq!(kp.sign(b"other").unwrap_err(), CryptoError::KeyReuse);
        assert!(kp.is_used());
    }

    #[test]
    fn public_key_roundtrips() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let kp = OtsKeyPair::generate(&mut rng);
        let bytes = kp.public_key().to_canonical();
        let back = LamportPublicKey::from_canonical(&bytes).unwrap();
        assert_eq!(&back, kp.public_key());
        assert_eq!(back.digest(), kp.public_key().digest());
    }

    #[test]
    fn digest_from_parts_matches_full_key() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let kp = OtsKeyPair::generate(&mut rng);
        let d = hash(b"m");
        let revealed = kp.seed.sign_digest(&d);
        let comp = kp.public.complement_for(&d);
        assert_eq!(LamportPublicKey::digest_from_parts(&d, &revealed, &comp), Some(kp.public.digest()));
    }
}
