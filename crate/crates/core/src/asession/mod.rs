//! Two-agent sessions: handshake with a Provider grant and user-signed chain
//! commitments, then request/response rounds each paid for with one hash
//! chain token per side and tagged under the session key.
//!
//! Token accounting: the handshake itself carries the first request and the
//! first response, so a budget of `Q` tokens buys exactly `Q` requests.

mod commit;
mod messages;
mod state;
mod transcript;

use std::fmt;

use thiserror::Error;

use crate::crypto::{ChainSeedKey, CryptoError, PublicKey, Signature, SignatureKeyPair};
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::policy::Aid;
use crate::provider::AgentInfo;

pub use commit::{
    commitment_payload, ots_chain_payload, Approval, ApprovalKind, ChainCommitment, Refuse, ReplayGuard, UserSigner,
};
pub use messages::{
    derive_sid, kind_name, session_key, Frame, HandshakeInit, HandshakeResp, TaskMsg, Terminal, TerminalReason,
    SID_NONCE_LEN,
};
pub use state::{initiate, initiate_prepared, respond, InitiatorPlan, Reply, ResponderCtx, SessionState, SessionSummary};
pub use transcript::{audit_transcript, AuditReport, Transcript, TranscriptDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Initiator,
    Responder,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Initiator => Role::Responder,
            Role::Responder => Role::Initiator,
        }
    }

    fn code(self) -> u64 {
        match self {
            Role::Initiator => 0,
            Role::Responder => 1,
        }
    }

    fn from_code(c: u64) -> Option<Self> {
        match c {
            0 => Some(Role::Initiator),
            1 => Some(Role::Responder),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Initiator => "initiator",
            Role::Responder => "responder",
        })
    }
}

/// A verification failure that is the peer's fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fault {
    BadProviderSig,
    BadInitiatorSig,
    BadUserSig,
    BadProof,
    BadToken,
    BadTag,
    ReplayedNonce,
    ReusedOtsKey,
    ReusedChain,
    CounterMismatch,
    WrongPeer,
    UnknownSession,
    Unexpected,
    Malformed,
}

impl Fault {
    pub const ALL: [Fault; 14] = [
        Fault::BadProviderSig,
        Fault::BadInitiatorSig,
        Fault::BadUserSig,
        Fault::BadProof,
        Fault::BadToken,
        Fault::BadTag,
        Fault::ReplayedNonce,
        Fault::ReusedOtsKey,
        Fault::ReusedChain,
        Fault::CounterMismatch,
        Fault::WrongPeer,
        Fault::UnknownSession,
        Fault::Unexpected,
        Fault::Malformed,
    ];

    fn code(self) -> u64 {
        Fault::ALL.iter().position(|f| *f == self).expect("listed") as u64
    }

    fn from_code(c: u64) -> Option<Self> {
        Fault::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("{fault} attributed to {accountable}")]
    Rejected { fault: Fault, accountable: Role },
    #[error("responder quota exhausted")]
    QuotaExhausted,
    #[error("session expired")]
    Expired,
    #[error("own token budget exhausted")]
    OwnBudgetExhausted,
    #[error("peer token budget exhausted")]
    PeerBudgetExhausted,
    #[error("user refused to sign")]
    UserRefused,
    #[error("no responder policy for this initiator")]
    NoPolicy,
    #[error("invalid state: {0}")]
    InvalidState(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl SessionError {
    pub fn accountable(&self) -> Option<Role> {
        match self {
            SessionError::Rejected { accountable, .. } => Some(*accountable),
            _ => None,
        }
    }

    pub fn fault(&self) -> Option<Fault> {
        match self {
            SessionError::Rejected { fault, .. } => Some(*fault),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Handshaking,
    Open,
    Exhausted,
    Expired,
    Aborted,
    Closed,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        !matches!(self, Status::Handshaking | Status::Open)
    }

    fn code(self) -> u64 {
        match self {
            Status::Handshaking => 0,
            Status::Open => 1,
            Status::Exhausted => 2,
            Status::Expired => 3,
            Status::Aborted => 4,
            Status::Closed => 5,
        }
    }

    fn from_code(c: u64) -> Option<Self> {
        Some(match c {
            0 => Status::Handshaking,
            1 => Status::Open,
            2 => Status::Exhausted,
            3 => Status::Expired,
            4 => Status::Aborted,
            5 => Status::Closed,
            _ => return None,
        })
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Handshaking => "handshaking",
            Status::Open => "open",
            Status::Exhausted => "exhausted",
            Status::Expired => "expired",
            Status::Aborted => "aborted",
            Status::Closed => "closed",
        })
    }
}

impl Encode for Role {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.u64(self.code());
    }
}

impl Decode for Role {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Role::from_code(dec.u64()?).ok_or(DecodeError::Invalid("role"))
    }
}

impl Encode for Fault {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.u64(self.code());
    }
}

impl Decode for Fault {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Fault::from_code(dec.u64()?).ok_or(DecodeError::Invalid("fault"))
    }
}

impl Encode for Status {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.u64(self.code());
    }
}

impl Decode for Status {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Status::from_code(dec.u64()?).ok_or(DecodeError::Invalid("status"))
    }
}

/// An agent's long-term secrets and its registered public bundle.
pub struct AgentKeys {
    pub aid: Aid,
    identity: SignatureKeyPair,
    chain_key: ChainSeedKey,
    pub info: AgentInfo,
}

impl fmt::Debug for AgentKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentKeys").field("aid", &self.aid).field("identity", &self.identity).finish()
    }
}

impl AgentKeys {
    pub fn new(identity: SignatureKeyPair, chain_key: ChainSeedKey, info: AgentInfo) -> Self {
        AgentKeys { aid: info.aid.clone(), identity, chain_key, info }
    }

    pub fn identity_pk(&self) -> &PublicKey {
        self.identity.public_key()
    }

    pub fn chain_key(&self) -> &ChainSeedKey {
        &self.chain_key
    }

    pub fn sign(&mut self, payload: &[u8]) -> Result<Signature, CryptoError> {
        self.identity.sign(payload)
    }
}

/// Executes a request on the responder and produces the response payload.
pub trait Executor {
    fn execute(&mut self, request: &[u8]) -> Vec<u8>;
}

impl<F: FnMut(&[u8]) -> Vec<u8>> Executor for F {
    fn execute(&mut self, request: &[u8]) -> Vec<u8> {
        self(request)
    }
}

#[cfg(test)]
mod tests;
