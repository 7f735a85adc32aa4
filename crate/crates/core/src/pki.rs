//! Certificates and the local certificate authority.

use rand::{CryptoRng, RngCore};

use crate::crypto::{sig_verify, CryptoError, PublicKey, SchemeId, Signature, SignatureKeyPair};
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};

/// Bytes that get signed: a context label followed by the fields.
pub fn signing_payload(label: &str, build: impl FnOnce(&mut Encoder)) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str(label);
    build(&mut enc);
    enc.finish()
}

/// CA binding of a subject name to key bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: String,
    pub key: Vec<u8>,
    pub issuer_sig: Signature,
}

impl Certificate {
    fn payload(subject: &str, key: &[u8]) -> Vec<u8> {
        signing_payload("cert", |e| {
            e.str(subject).bytes(key);
        })
    }

    pub fn verify(&self, ca: &PublicKey) -> bool {
        sig_verify(ca, &Self::payload(&self.subject, &self.key), &self.issuer_sig)
    }

    /// The certified key read as a signature public key.
    pub fn public_key(&self) -> Option<PublicKey> {
        PublicKey::from_canonical(&self.key).ok()
    }
}

impl Encode for Certificate {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(&self.subject).bytes(&self.key).value(&self.issuer_sig);
    }
}

impl Decode for Certificate {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Certificate { subject: dec.string()?, key: dec.bytes()?.to_vec(), issuer_sig: dec.value()? })
    }
}

#[derive(Debug)]
pub struct CertificateAuthority {
    key: SignatureKeyPair,
}

impl CertificateAuthority {
    pub fn new<R: RngCore + CryptoRng>(scheme: SchemeId, rng: &mut R) -> Result<Self, CryptoError> {
        Ok(CertificateAuthority { key: SignatureKeyPair::generate(scheme, rng)? })
    }

    pub fn public_key(&self) -> &PublicKey {
        self.key.public_key()
    }

    pub fn issue(&mut self, subject: &str, key: &[u8]) -> Result<Certificate, CryptoError> {
        let issuer_sig = self.key.sign(&Certificate::payload(subject, key))?;
        Ok(Certificate { subject: subject.to_string(), key: key.to_vec(), issuer_sig })
    }

    pub fn issue_for(&mut self, subject: &str, pk: &PublicKey) -> Result<Certificate, CryptoError> {
        self.issue(subject, &pk.to_canonical())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn issued_certificate_verifies_only_under_issuer() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut ca = CertificateAuthority::new(SchemeId::merkle_lamport(2), &mut rng).unwrap();
        let other = CertificateAuthority::new(SchemeId::merkle_lamport(2), &mut rng).unwrap();
        let user = SignatureKeyPair::generate(SchemeId::merkle_lamport(1), &mut rng).unwrap();
        let cert = ca.issue_for("alice@x", user.public_key()).unwrap();
        assert!(cert.verify(ca.public_key()));
        assert!(!cert.verify(other.public_key()));
        assert_eq!(cert.public_key().as_ref(), Some(user.public_key()));
        let mut forged = cert.clone();
        forged.subject = "mallory@x".into();
        assert!(!forged.verify(ca.public_key()));
    }
}
