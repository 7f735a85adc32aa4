use std::fmt;

use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};

use super::CryptoError;
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};

pub const DIGEST_LEN: usize = 32;

/// A 32-octet SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = hex::decode(s.trim()).map_err(|_| CryptoError::BadHex)?;
        let arr: [u8; DIGEST_LEN] = raw.try_into().map_err(|_| CryptoError::BadHex)?;
        Ok(Digest(arr))
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; DIGEST_LEN];
        rng.fill_bytes(&mut b);
        Digest(b)
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 8] >> (7 - (i % 8))) & 1 == 1
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl Encode for Digest {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Decode for Digest {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Digest(dec.fixed()?))
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of the canonical encoding of `enc`.
pub fn hash_encoded(enc: Encoder) -> Digest {
    hash(&enc.finish())
}

pub fn hmac(key: &[u8], message: &[u8]) -> Result<Digest, CryptoError> {
    if key.is_empty() {
        return Err(CryptoError::EmptyKey);
    }
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(message);
    Ok(Digest(mac.finalize().into_bytes().into()))
}

/// Recomputes the tag and compares in constant time.
pub fn hmac_verify(key: &[u8], message: &[u8], tag: &Digest) -> bool {
    if key.is_empty() {
        return false;
    }
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(message);
    mac.verify_slice(tag.as_bytes()).is_ok()
}

/// Secret key an agent uses to derive hash-chain seeds.
#[derive(Clone, PartialEq, Eq)]
pub struct ChainSeedKey([u8; DIGEST_LEN]);

impl ChainSeedKey {
    pub fn from_bytes(b: [u8; DIGEST_LEN]) -> Self {
        ChainSeedKey(b)
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        ChainSeedKey(Digest::random(rng).0)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }
}

impl fmt::Debug for ChainSeedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ChainSeedKey(..)")
    }
}

/// `HMAC(key, sid ‖ aid_a ‖ aid_b ‖ addr)` over the canonical encoding.
pub fn prf(key: &ChainSeedKey, sid: &[u8], aid_a: &str, aid_b: &str, addr: u64) -> Digest {
    let mut enc = Encoder::new();
    enc.bytes(sid).str(aid_a).str(aid_b).u64(addr);
    hmac(key.as_bytes(), &enc.finish()).expect("seed key is never empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_key_is_rejected() {
        assert_eq!(hmac(b"", b"m"), Err(CryptoError::EmptyKey));
        assert!(!hmac_verify(b"", b"m", &Digest::default()));
    }

    #[test]
    fn hmac_detects_appended_octet() {
        let t = hmac(b"k", b"m").unwrap();
        assert_eq!(t, hmac(b"k", b"m").unwrap());
        assert_ne!(t, hmac(b"k", b"m\0").unwrap());
        assert!(hmac_verify(b"k", b"m", &t));
        assert!(!hmac_verify(b"k", b"m\0", &t));
    }

    #[test]
    fn prf_separates_address_and_role_order() {
        let k = ChainSeedKey::from_bytes([7; 32]);
        let a = prf(&k, b"sid", "a@d:x", "b@d:y", 0);
        assert_eq!(a, prf(&k, b"sid", "a@d:x", "b@d:y", 0));
        assert_ne!(a, prf(&k, b"sid", "a@d:x", "b@d:y", 1));
        assert_ne!(a, prf(&k, b"sid", "b@d:y", "a@d:x", 0));
    }

    #[test]
    fn bit_order_is_msb_first() {
        let mut d = Digest::default();
        d.0[0] = 0b1000_0000;
        d.0[1] = 0b0000_0001;
        assert!(d.bit(0));
        assert!(!d.bit(1));
        assert!(d.bit(15));
    }
}
