//! Registry records and the signed bundles built from them.

use crate::crypto::{sig_verify, Digest, PublicKey, Signature};
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::pki::{signing_payload, Certificate};
use crate::policy::{Aid, ContactPolicy};

/// Endpoint descriptor `ED_A`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub device: String,
    pub ip: String,
    pub port: u16,
}

impl Encode for Endpoint {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(&self.device).str(&self.ip).u64(u64::from(self.port));
    }
}

impl Decode for Endpoint {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Endpoint {
            device: dec.string()?,
            ip: dec.string()?,
            port: u16::try_from(dec.u64()?).map_err(|_| DecodeError::Invalid("port"))?,
        })
    }
}

/// Agent metadata `M_A`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentMetadata {
    pub endpoint: Endpoint,
    pub tls_cert: Certificate,
    pub tls_pk: Vec<u8>,
    pub identity_pk: PublicKey,
}

impl Encode for AgentMetadata {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.value(&self.endpoint).value(&self.tls_cert).bytes(&self.tls_pk).value(&self.identity_pk);
    }
}

impl Decode for AgentMetadata {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AgentMetadata {
            endpoint: dec.value()?,
            tls_cert: dec.value()?,
            tls_pk: dec.bytes()?.to_vec(),
            identity_pk: dec.value()?,
        })
    }
}

/// The Provider's public material agents need to check its signatures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderKeys {
    pub ta_pk: PublicKey,
    pub ta_tls_pk: Vec<u8>,
}

/// Payload of the user's signature binding an agent id to its identity key.
pub fn agent_id_payload(aid: &Aid, identity_pk: &PublicKey) -> Vec<u8> {
    signing_payload("agent-id", |e| {
        e.value(aid).value(identity_pk);
    })
}

/// Payload of the user's signature over the agent's endpoint and keys,
/// including the Provider keys it is registered with.
pub fn agent_info_payload(aid: &Aid, endpoint: &Endpoint, tls_pk: &[u8], provider: &ProviderKeys) -> Vec<u8> {
    signing_payload("agent-info", |e| {
        e.value(aid).value(endpoint).bytes(tls_pk).bytes(&provider.ta_tls_pk).value(&provider.ta_pk);
    })
}

/// Payload of the Provider's registration confirmation.
pub fn registration_payload(
    aid: &Aid,
    tls_cert: &Certificate,
    endpoint: &Endpoint,
    identity_pk: &PublicKey,
    sig_info: &Signature,
) -> Vec<u8> {
    signing_payload("agent-registered", |e| {
        e.value(aid).value(tls_cert).value(endpoint).value(identity_pk).value(sig_info);
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub uid: String,
    pub pwd_hash: Digest,
    pub id_cert: Certificate,
}

impl Encode for UserRecord {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(&self.uid).value(&self.pwd_hash).value(&self.id_cert);
    }
}

impl Decode for UserRecord {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(UserRecord { uid: dec.string()?, pwd_hash: dec.value()?, id_cert: dec.value()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentRecord {
    pub aid: Aid,
    pub owner_uid: String,
    pub metadata: AgentMetadata,
    pub cp: ContactPolicy,
    pub sig_id: Signature,
    pub sig_info: Signature,
}

impl Encode for AgentRecord {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.value(&self.aid)
            .str(&self.owner_uid)
            .value(&self.metadata)
            .value(&self.cp)
            .value(&self.sig_id)
            .value(&self.sig_info);
    }
}

impl Decode for AgentRecord {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AgentRecord {
            aid: dec.value()?,
            owner_uid: dec.string()?,
            metadata: dec.value()?,
            cp: dec.value()?,
            sig_id: dec.value()?,
            sig_info: dec.value()?,
        })
    }
}

/// `info_A`: everything a peer needs to authenticate an agent and its user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentInfo {
    pub user_cert: Certificate,
    pub aid: Aid,
    pub metadata: AgentMetadata,
    pub sig_id: Signature,
    pub sig_info: Signature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoCheck {
    BadCertificate,
    BadSignature,
}

impl AgentInfo {
    /// Checks the user certificate under the CA and both user signatures.
    /// Returns the owning user's public key.
    pub fn verify(&self, ca: &PublicKey, provider: &ProviderKeys) -> Result<PublicKey, InfoCheck> {
        if !self.user_cert.verify(ca) || self.user_cert.subject != self.aid.uid() {
            return Err(InfoCheck::BadCertificate);
        }
        let pk_user = self.user_cert.public_key().ok_or(InfoCheck::BadCertificate)?;
        if !self.metadata.tls_cert.verify(ca)
            || self.metadata.tls_cert.subject != self.aid.as_str()
            || self.metadata.tls_cert.key != self.metadata.tls_pk
        {
            return Err(InfoCheck::BadCertificate);
        }
        let info = agent_info_payload(&self.aid, &self.metadata.endpoint, &self.metadata.tls_pk, provider);
        let id = agent_id_payload(&self.aid, &self.metadata.identity_pk);
        if !sig_verify(&pk_user, &info, &self.sig_info) || !sig_verify(&pk_user, &id, &self.sig_id) {
            return Err(InfoCheck::BadSignature);
        }
        Ok(pk_user)
    }
}

impl Encode for AgentInfo {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.value(&self.user_cert)
            .value(&self.aid)
            .value(&self.metadata)
            .value(&self.sig_id)
            .value(&self.sig_info);
    }
}

impl Decode for AgentInfo {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AgentInfo {
            user_cert: dec.value()?,
            aid: dec.value()?,
            metadata: dec.value()?,
            sig_id: dec.value()?,
            sig_info: dec.value()?,
        })
    }
}

pub const NONCE_LEN: usize = 16;

/// Provider-signed grant for one A-session between a specific pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorizationToken {
    pub nonce: [u8; NONCE_LEN],
    pub responder: AgentInfo,
    pub initiator_aid: Aid,
    pub initiator_pk: PublicKey,
    pub sig: Signature,
}

impl AuthorizationToken {
    pub fn payload(
        nonce: &[u8; NONCE_LEN],
        responder: &AgentInfo,
        initiator_aid: &Aid,
        initiator_pk: &PublicKey,
    ) -> Vec<u8> {
        signing_payload("access", |e| {
            e.bytes(nonce)
                .value(&responder.user_cert)
                .value(&responder.aid)
                .value(&responder.metadata)
                .value(&responder.sig_id)
                .value(&responder.sig_info)
                .value(initiator_aid)
                .value(initiator_pk);
        })
    }

    pub fn provider_sig_valid(&self, ta_pk: &PublicKey) -> bool {
        let p = Self::payload(&self.nonce, &self.responder, &self.initiator_aid, &self.initiator_pk);
        sig_verify(ta_pk, &p, &self.sig)
    }
}

impl Encode for AuthorizationToken {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(&self.nonce)
            .value(&self.responder)
            .value(&self.initiator_aid)
            .value(&self.initiator_pk)
            .value(&self.sig);
    }
}

impl Decode for AuthorizationToken {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AuthorizationToken {
            nonce: dec.fixed()?,
            responder: dec.value()?,
            initiator_aid: dec.value()?,
            initiator_pk: dec.value()?,
            sig: dec.value()?,
        })
    }
}

/// Initiator-side check of a discovery answer: the responder's user
/// certificate, both user signatures on the responder, and the Provider's
/// signature over the whole grant.
pub fn verify_authorization(
    token: &AuthorizationToken,
    ca: &PublicKey,
    provider: &ProviderKeys,
    expected_responder: &Aid,
) -> bool {
    token.responder.aid == *expected_responder
        && token.responder.verify(ca, provider).is_ok()
        && token.provider_sig_valid(&provider.ta_pk)
}
