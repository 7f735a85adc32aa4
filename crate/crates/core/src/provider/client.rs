//! The user side of registration: a certified signing key and the
//! signatures that vouch for the user's agents.

use rand::{CryptoRng, RngCore};

use super::records::{agent_id_payload, agent_info_payload, Endpoint, ProviderKeys};
use super::wire::AgentRegistration;
use crate::crypto::{CryptoError, PublicKey, SchemeId, Signature, SignatureKeyPair};
use crate::pki::{Certificate, CertificateAuthority};
use crate::policy::{Aid, ContactPolicy};

#[derive(Debug)]
pub struct User {
    pub uid: String,
    pub pwd: String,
    key: SignatureKeyPair,
    pub cert: Certificate,
}

impl User {
    pub fn new<R: RngCore + CryptoRng>(
        uid: &str,
        pwd: &str,
        scheme: SchemeId,
        ca: &mut CertificateAuthority,
        rng: &mut R,
    ) -> Result<Self, CryptoError> {
        let key = SignatureKeyPair::generate(scheme, rng)?;
        let cert = ca.issue_for(uid, key.public_key())?;
        Ok(User { uid: uid.to_string(), pwd: pwd.to_string(), key, cert })
    }

    pub fn public_key(&self) -> &PublicKey {
        self.key.public_key()
    }

    pub fn sign(&mut self, payload: &[u8]) -> Result<Signature, CryptoError> {
        self.key.sign(payload)
    }

    pub fn signatures_remaining(&self) -> u64 {
        self.key.uses_remaining()
    }

    /// Builds the registration request for one of this user's agents.
    pub fn agent_registration(
        &mut self,
        aid: &Aid,
        endpoint: Endpoint,
        cp: ContactPolicy,
        tls_cert: Certificate,
        identity_pk: PublicKey,
        provider: &ProviderKeys,
    ) -> Result<AgentRegistration, CryptoError> {
        let sig_id = self.key.sign(&agent_id_payload(aid, &identity_pk))?;
        let sig_info = self.key.sign(&agent_info_payload(aid, &endpoint, &tls_cert.key, provider))?;
        Ok(AgentRegistration {
            uid: self.uid.clone(),
            pwd: self.pwd.clone(),
            aid: aid.clone(),
            endpoint,
            cp,
            tls_cert,
            identity_pk,
            sig_id,
            sig_info,
        })
    }
}
