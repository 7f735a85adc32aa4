//! The Provider: user and agent registry, contact policies, per-pair session
//! counters and discovery grants.

mod client;
mod log;
mod records;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::crypto::{hash, sig_verify, CryptoError, Digest, PublicKey, Signature, SignatureKeyPair};
use crate::encoding::Encoder;
use crate::pki::Certificate;
use crate::policy::{resolve_budget, Aid, Budget, ContactPolicy};

pub use client::User;
pub use log::{LogRecord, RegistryLog};
pub use records::{
    agent_id_payload, agent_info_payload, registration_payload, verify_authorization, AgentInfo, AgentMetadata,
    AgentRecord, AuthorizationToken, Endpoint, InfoCheck, ProviderKeys, UserRecord, NONCE_LEN,
};
pub use wire::AgentRegistration;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("uid already registered")]
    DuplicateUid,
    #[error("certificate does not verify")]
    BadCertificate,
    #[error("authentication failed")]
    AuthFailed,
    #[error("agent id already registered")]
    DuplicateAid,
    #[error("endpoint already registered")]
    DuplicateEndpoint,
    #[error("user signature does not verify")]
    BadSignature,
    #[error("unknown agent")]
    UnknownAgent,
    #[error("contact policies do not authorize this pair")]
    NotAuthorized,
    #[error("session budget for this pair is exhausted")]
    BudgetExhausted,
    #[error("provider signing key exhausted")]
    KeyExhausted,
    #[error("registry log: {0}")]
    Storage(String),
    #[error("malformed request")]
    Malformed,
}

impl ProviderError {
    pub fn code(&self) -> u32 {
        match self {
            ProviderError::DuplicateUid => 1,
            ProviderError::BadCertificate => 2,
            ProviderError::AuthFailed => 3,
            ProviderError::DuplicateAid => 4,
            ProviderError::DuplicateEndpoint => 5,
            ProviderError::BadSignature => 6,
            ProviderError::UnknownAgent => 7,
            ProviderError::NotAuthorized => 8,
            ProviderError::BudgetExhausted => 9,
            ProviderError::KeyExhausted => 10,
            ProviderError::Storage(_) => 11,
            ProviderError::Malformed => 12,
        }
    }

    pub fn from_code(code: u32) -> Self {
        match code {
            1 => ProviderError::DuplicateUid,
            2 => ProviderError::BadCertificate,
            3 => ProviderError::AuthFailed,
            4 => ProviderError::DuplicateAid,
            5 => ProviderError::DuplicateEndpoint,
            6 => ProviderError::BadSignature,
            7 => ProviderError::UnknownAgent,
            8 => ProviderError::NotAuthorized,
            9 => ProviderError::BudgetExhausted,
            10 => ProviderError::KeyExhausted,
            11 => ProviderError::Storage(String::new()),
            _ => ProviderError::Malformed,
        }
    }
}

impl From<CryptoError> for ProviderError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::KeyExhausted => ProviderError::KeyExhausted,
            _ => ProviderError::Malformed,
        }
    }
}

#[derive(Debug, Default)]
struct Registry {
    users: BTreeMap<String, UserRecord>,
    agents: BTreeMap<Aid, AgentRecord>,
    endpoints: BTreeSet<Endpoint>,
    /// Keyed `(responder, initiator)`.
    counters: BTreeMap<(Aid, Aid), u32>,
    nonces: BTreeSet<[u8; NONCE_LEN]>,
}

impl Registry {
    fn apply(&mut self, rec: &LogRecord) {
        match rec {
            LogRecord::User(u) => {
                self.users.insert(u.uid.clone(), u.clone());
            }
            LogRecord::Agent { record, .. } => {
                self.endpoints.insert(record.metadata.endpoint.clone());
                self.agents.insert(record.aid.clone(), record.clone());
            }
            LogRecord::Policy { aid, cp } => {
                if let Some(a) = self.agents.get_mut(aid) {
                    a.cp = cp.clone();
                }
                self.counters.retain(|(r, i), left| *left > 0 || (r != aid && i != aid));
            }
            LogRecord::Grant { responder, initiator, nonce, remaining, .. } => {
                self.counters.insert((responder.clone(), initiator.clone()), *remaining);
                self.nonces.insert(*nonce);
            }
        }
    }

    fn authenticate(&self, uid: &str, pwd: &str) -> Result<&UserRecord, ProviderError> {
        let user = self.users.get(uid).ok_or(ProviderError::AuthFailed)?;
        if bool::from(hash(pwd.as_bytes()).as_bytes().ct_eq(user.pwd_hash.as_bytes())) {
            Ok(user)
        } else {
            Err(ProviderError::AuthFailed)
        }
    }

    fn info(&self, aid: &Aid) -> Option<AgentInfo> {
        let a = self.agents.get(aid)?;
        let u = self.users.get(&a.owner_uid)?;
        Some(AgentInfo {
            user_cert: u.id_cert.clone(),
            aid: a.aid.clone(),
            metadata: a.metadata.clone(),
            sig_id: a.sig_id.clone(),
            sig_info: a.sig_info.clone(),
        })
    }
}

/// Registry service. Every operation takes the registry lock for its whole
/// duration, so check-and-decrement on counters is atomic.
pub struct Provider {
    ca: PublicKey,
    keys: ProviderKeys,
    signer: Mutex<SignatureKeyPair>,
    state: Mutex<Registry>,
    rng: Mutex<ChaCha20Rng>,
    log: Option<Mutex<RegistryLog>>,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider").field("keys", &self.keys).finish_non_exhaustive()
    }
}

impl Provider {
    pub fn new(ca: PublicKey, ta_key: SignatureKeyPair, ta_tls_pk: Vec<u8>, seed: u64) -> Self {
        let keys = ProviderKeys { ta_pk: ta_key.public_key().clone(), ta_tls_pk };
        Provider {
            ca,
            keys,
            signer: Mutex::new(ta_key),
            state: Mutex::new(Registry::default()),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            log: None,
        }
    }

    /// Opens (or creates) an append-only registry log, replays it, and keeps
    /// appending to it. The signing key's leaf counter is moved past every
    /// signature recorded in the log.
    pub fn with_log(mut self, path: &Path) -> Result<Self, ProviderError> {
        let (log, records) = RegistryLog::open(path).map_err(|e| ProviderError::Storage(e.to_string()))?;
        {
            let mut st = self.state.lock().expect("registry lock");
            let mut signer = self.signer.lock().expect("signer lock");
            for rec in &records {
                st.apply(rec);
                if let Some(leaf) = rec.ta_leaf() {
                    signer.advance_to(leaf + 1);
                }
            }
        }
        self.log = Some(Mutex::new(log));
        Ok(self)
    }

    pub fn keys(&self) -> &ProviderKeys {
        &self.keys
    }

    pub fn ca(&self) -> &PublicKey {
        &self.ca
    }

    fn commit(&self, st: &mut Registry, rec: LogRecord) -> Result<(), ProviderError> {
        if let Some(log) = &self.log {
            log.lock()
                .expect("log lock")
                .append(&rec)
                .map_err(|e| ProviderError::Storage(e.to_string()))?;
        }
        st.apply(&rec);
        Ok(())
    }

    fn sign(&self, payload: &[u8]) -> Result<Signature, ProviderError> {
        Ok(self.signer.lock().expect("signer lock").sign(payload)?)
    }

    /// External identity verification is not modelled and always accepts.
    pub fn register_user(&self, uid: &str, pwd: &str, id_cert: Certificate) -> Result<(), ProviderError> {
        let mut st = self.state.lock().expect("registry lock");
        if st.users.contains_key(uid) {
            return Err(ProviderError::DuplicateUid);
        }
        if id_cert.subject != uid || !id_cert.verify(&self.ca) || id_cert.public_key().is_none() {
            return Err(ProviderError::BadCertificate);
        }
        let rec = UserRecord { uid: uid.to_string(), pwd_hash: hash(pwd.as_bytes()), id_cert };
        self.commit(&mut st, LogRecord::User(rec))
    }

    /// Returns the Provider's confirmation signature over the registration.
    pub fn register_agent(&self, req: AgentRegistration) -> Result<Signature, ProviderError> {
        let mut st = self.state.lock().expect("registry lock");
        let user = st.authenticate(&req.uid, &req.pwd)?;
        if req.aid.uid() != req.uid {
            return Err(ProviderError::AuthFailed);
        }
        let pk_user = user.id_cert.public_key().ok_or(ProviderError::BadCertificate)?;
        if st.agents.contains_key(&req.aid) {
            return Err(ProviderError::DuplicateAid);
        }
        if st.endpoints.contains(&req.endpoint) {
            return Err(ProviderError::DuplicateEndpoint);
        }
        if !req.tls_cert.verify(&self.ca) || req.tls_cert.subject != req.aid.as_str() {
            return Err(ProviderError::BadCertificate);
        }
        let tls_pk = req.tls_cert.key.clone();
        let info = agent_info_payload(&req.aid, &req.endpoint, &tls_pk, &self.keys);
        let id = agent_id_payload(&req.aid, &req.identity_pk);
        if !sig_verify(&pk_user, &id, &req.sig_id) || !sig_verify(&pk_user, &info, &req.sig_info) {
            return Err(ProviderError::BadSignature);
        }
        let payload =
            registration_payload(&req.aid, &req.tls_cert, &req.endpoint, &req.identity_pk, &req.sig_info);
        let sig = self.sign(&payload)?;
        let record = AgentRecord {
            aid: req.aid,
            owner_uid: req.uid,
            metadata: AgentMetadata { endpoint: req.endpoint, tls_cert: req.tls_cert, tls_pk, identity_pk: req.identity_pk },
            cp: req.cp,
            sig_id: req.sig_id,
            sig_info: req.sig_info,
        };
        self.commit(&mut st, LogRecord::Agent { record, ta_leaf: sig.leaf })?;
        Ok(sig)
    }

    /// Replaces an agent's contact policy. Live counters keep their value;
    /// exhausted ones are dropped so the new budget applies on next contact.
    pub fn update_policy(&self, uid: &str, pwd: &str, aid: &Aid, cp: ContactPolicy) -> Result<(), ProviderError> {
        let mut st = self.state.lock().expect("registry lock");
        st.authenticate(uid, pwd)?;
        let agent = st.agents.get(aid).ok_or(ProviderError::UnknownAgent)?;
        if agent.owner_uid != uid {
            return Err(ProviderError::AuthFailed);
        }
        self.commit(&mut st, LogRecord::Policy { aid: aid.clone(), cp })
    }

    pub fn discover(&self, initiator: &Aid, responder: &Aid) -> Result<AuthorizationToken, ProviderError> {
        let mut st = self.state.lock().expect("registry lock");
        let (Some(rec_i), Some(rec_r)) = (st.agents.get(initiator), st.agents.get(responder)) else {
            return Err(ProviderError::UnknownAgent);
        };
        let key = (responder.clone(), initiator.clone());
        let remaining = match st.counters.get(&key) {
            Some(c) => *c,
            None => match resolve_budget(&rec_r.cp, &rec_i.cp, responder, initiator) {
                Budget::NoMatch => return Err(ProviderError::NotAuthorized),
                Budget::Limit(b) => b,
            },
        };
        if remaining == 0 {
            return Err(ProviderError::BudgetExhausted);
        }
        let initiator_pk = rec_i.metadata.identity_pk.clone();
        let info = st.info(responder).ok_or(ProviderError::UnknownAgent)?;
        let nonce = {
            let mut rng = self.rng.lock().expect("rng lock");
            loop {
                let mut n = [0u8; NONCE_LEN];
                rng.fill_bytes(&mut n);
                if !st.nonces.contains(&n) {
                    break n;
                }
            }
        };
        let payload = AuthorizationToken::payload(&nonce, &info, initiator, &initiator_pk);
        let sig = self.sign(&payload)?;
        self.commit(
            &mut st,
            LogRecord::Grant {
                responder: responder.clone(),
                initiator: initiator.clone(),
                nonce,
                remaining: remaining - 1,
                ta_leaf: sig.leaf,
            },
        )?;
        Ok(AuthorizationToken { nonce, responder: info, initiator_aid: initiator.clone(), initiator_pk, sig })
    }

    /// Remaining sessions for a pair, if the counter exists.
    pub fn counter(&self, responder: &Aid, initiator: &Aid) -> Option<u32> {
        let st = self.state.lock().expect("registry lock");
        st.counters.get(&(responder.clone(), initiator.clone())).copied()
    }

    pub fn agent_info(&self, aid: &Aid) -> Option<AgentInfo> {
        self.state.lock().expect("registry lock").info(aid)
    }

    pub fn agent_record(&self, aid: &Aid) -> Option<AgentRecord> {
        self.state.lock().expect("registry lock").agents.get(aid).cloned()
    }

    pub fn issued_nonces(&self) -> usize {
        self.state.lock().expect("registry lock").nonces.len()
    }

    /// Re-verifies both user signatures of every stored agent record.
    pub fn audit(&self) -> Vec<Aid> {
        let st = self.state.lock().expect("registry lock");
        st.agents
            .keys()
            .filter(|aid| st.info(aid).is_none_or(|i| i.verify(&self.ca, &self.keys).is_err()))
            .cloned()
            .collect()
    }

    /// Digest over the whole registry state and the signer position.
    pub fn state_digest(&self) -> Digest {
        let st = self.state.lock().expect("registry lock");
        let mut enc = Encoder::new();
        enc.nested(|e| {
            for u in st.users.values() {
                e.value(u);
            }
        });
        enc.nested(|e| {
            for a in st.agents.values() {
                e.value(a);
            }
        });
        enc.nested(|e| {
            for ((r, i), c) in &st.counters {
                e.value(r).value(i).u64(u64::from(*c));
            }
        });
        enc.nested(|e| {
            for n in &st.nonces {
                e.bytes(n);
            }
        });
        enc.u64(self.signer.lock().expect("signer lock").next_leaf());
        hash(&enc.finish())
    }

    pub fn signatures_remaining(&self) -> u64 {
        self.signer.lock().expect("signer lock").uses_remaining()
    }
}


#[cfg(test)]
mod tests;
