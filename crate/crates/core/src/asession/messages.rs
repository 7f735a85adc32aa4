//! A-session messages and their framing.

use crate::crypto::{hash_encoded, hmac, Digest, NextTok, Signature};
use crate::encoding::{leaf_paths, Decode, DecodeError, Decoder, Encode, Encoder};
use crate::pki::signing_payload;
use crate::policy::{Aid, Tick};
use crate::provider::{AgentInfo, AuthorizationToken};

use super::commit::ChainCommitment;

pub const SID_NONCE_LEN: usize = 16;

/// `sid = H(task ‖ aid_I ‖ aid_R ‖ nonce)`.
pub fn derive_sid(task_digest: &Digest, initiator: &Aid, responder: &Aid, nonce: &[u8; SID_NONCE_LEN]) -> Digest {
    let mut enc = Encoder::new();
    enc.str("sid").value(task_digest).value(initiator).value(responder).bytes(nonce);
    hash_encoded(enc)
}

pub fn session_key(r1: &[u8; 32], r2: &[u8; 32]) -> Digest {
    let mut enc = Encoder::new();
    enc.bytes(r1).bytes(r2);
    hash_encoded(enc)
}

fn tag_over(k_ses: &Digest, label: &str, build: impl FnOnce(&mut Encoder)) -> Digest {
    let msg = signing_payload(label, build);
    hmac(k_ses.as_bytes(), &msg).expect("session key is never empty")
}

/// `m0` together with the Provider grant and the initiator's signature.
/// Also carries the first request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeInit {
    pub r1: [u8; 32],
    pub sid_nonce: [u8; SID_NONCE_LEN],
    pub task_digest: Digest,
    pub info: AgentInfo,
    pub q: u64,
    pub delta: Tick,
    pub tok: NextTok,
    pub commitment: ChainCommitment,
    pub auth: AuthorizationToken,
    pub request: Vec<u8>,
    pub sig_init: Signature,
}

impl HandshakeInit {
    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.bytes(&self.r1)
            .bytes(&self.sid_nonce)
            .value(&self.task_digest)
            .value(&self.info)
            .u64(self.q)
            .u64(self.delta)
            .value(&self.tok)
            .value(&self.commitment)
            .value(&self.auth)
            .bytes(&self.request);
    }

    pub fn signed_payload(&self) -> Vec<u8> {
        signing_payload("init", |e| self.encode_unsigned(e))
    }

    pub fn sid(&self) -> Digest {
        derive_sid(&self.task_digest, &self.info.aid, &self.auth.responder.aid, &self.sid_nonce)
    }
}

impl Encode for HandshakeInit {
    fn encode_fields(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.value(&self.sig_init);
    }
}

impl Decode for HandshakeInit {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(HandshakeInit {
            r1: dec.fixed()?,
            sid_nonce: dec.fixed()?,
            task_digest: dec.value()?,
            info: dec.value()?,
            q: dec.u64()?,
            delta: dec.u64()?,
            tok: dec.value()?,
            commitment: dec.value()?,
            auth: dec.value()?,
            request: dec.bytes()?.to_vec(),
            sig_init: dec.value()?,
        })
    }
}

/// `m1`, carrying the first response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeResp {
    pub sid: Digest,
    pub r2: [u8; 32],
    pub q: u64,
    pub delta: Tick,
    pub tok: NextTok,
    pub icp_echo: Digest,
    pub sig_rcp: Signature,
    pub response: Vec<u8>,
    pub tag: Digest,
}

impl HandshakeResp {
    fn encode_untagged(&self, enc: &mut Encoder) {
        enc.value(&self.sid)
            .bytes(&self.r2)
            .u64(self.q)
            .u64(self.delta)
            .value(&self.tok)
            .value(&self.icp_echo)
            .value(&self.sig_rcp)
            .bytes(&self.response);
    }

    pub fn compute_tag(&self, k_ses: &Digest) -> Digest {
        tag_over(k_ses, "m1", |e| self.encode_untagged(e))
    }
}

impl Encode for HandshakeResp {
    fn encode_fields(&self, enc: &mut Encoder) {
        self.encode_untagged(enc);
        enc.value(&self.tag);
    }
}

impl Decode for HandshakeResp {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(HandshakeResp {
            sid: dec.value()?,
            r2: dec.fixed()?,
            q: dec.u64()?,
            delta: dec.u64()?,
            tok: dec.value()?,
            icp_echo: dec.value()?,
            sig_rcp: dec.value()?,
            response: dec.bytes()?.to_vec(),
            tag: dec.value()?,
        })
    }
}

/// A request (initiator to responder) or response after the handshake.
/// `echo` repeats the last token received from the peer; `opening`
/// introduces a fresh chain when the previous one is used up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskMsg {
    pub sid: Digest,
    pub payload: Vec<u8>,
    pub tok: NextTok,
    pub echo: Digest,
    pub opening: Option<ChainCommitment>,
    pub tag: Digest,
}

impl TaskMsg {
    fn encode_untagged(&self, enc: &mut Encoder) {
        enc.value(&self.sid).bytes(&self.payload).value(&self.tok).value(&self.echo).option(self.opening.as_ref());
    }

    pub fn compute_tag(&self, k_ses: &Digest, label: &str) -> Digest {
        tag_over(k_ses, label, |e| self.encode_untagged(e))
    }
}

impl Encode for TaskMsg {
    fn encode_fields(&self, enc: &mut Encoder) {
        self.encode_untagged(enc);
        enc.value(&self.tag);
    }
}

impl Decode for TaskMsg {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(TaskMsg {
            sid: dec.value()?,
            payload: dec.bytes()?.to_vec(),
            tok: dec.value()?,
            echo: dec.value()?,
            opening: dec.option()?,
            tag: dec.value()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminalReason {
    QuotaExhausted,
    Expired,
    Aborted,
    Closed,
}

impl TerminalReason {
    fn code(self) -> u64 {
        match self {
            TerminalReason::QuotaExhausted => 1,
            TerminalReason::Expired => 2,
            TerminalReason::Aborted => 3,
            TerminalReason::Closed => 4,
        }
    }

    fn from_code(c: u64) -> Option<Self> {
        Some(match c {
            1 => TerminalReason::QuotaExhausted,
            2 => TerminalReason::Expired,
            3 => TerminalReason::Aborted,
            4 => TerminalReason::Closed,
            _ => return None,
        })
    }
}

/// Session-ending notice. Tagged when a session key exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Terminal {
    pub sid: Digest,
    pub reason: TerminalReason,
    pub tag: Option<Digest>,
}

impl Terminal {
    pub fn compute_tag(sid: &Digest, reason: TerminalReason, k_ses: &Digest) -> Digest {
        tag_over(k_ses, "terminal", |e| {
            e.value(sid).u64(reason.code());
        })
    }
}

impl Encode for Terminal {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.value(&self.sid).u64(self.reason.code()).option(self.tag.as_ref());
    }
}

impl Decode for Terminal {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Terminal {
            sid: dec.value()?,
            reason: TerminalReason::from_code(dec.u64()?).ok_or(DecodeError::Invalid("terminal reason"))?,
            tag: dec.option()?,
        })
    }
}

pub const TAG_INIT: u8 = 0x10;
pub const TAG_RESP: u8 = 0x11;
pub const TAG_REQUEST: u8 = 0x12;
pub const TAG_RESPONSE: u8 = 0x13;
pub const TAG_TERMINAL: u8 = 0x14;

/// Any A-session message with its 1-octet type tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Init(Box<HandshakeInit>),
    Resp(Box<HandshakeResp>),
    Request(TaskMsg),
    Response(TaskMsg),
    Terminal(Terminal),
}

impl Frame {
    pub fn tag(&self) -> u8 {
        match self {
            Frame::Init(_) => TAG_INIT,
            Frame::Resp(_) => TAG_RESP,
            Frame::Request(_) => TAG_REQUEST,
            Frame::Response(_) => TAG_RESPONSE,
            Frame::Terminal(_) => TAG_TERMINAL,
        }
    }

    pub fn kind(&self) -> &'static str {
        kind_name(self.tag())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = match self {
            Frame::Init(m) => m.to_canonical(),
            Frame::Resp(m) => m.to_canonical(),
            Frame::Request(m) | Frame::Response(m) => m.to_canonical(),
            Frame::Terminal(m) => m.to_canonical(),
        };
        let mut out = Vec::with_capacity(body.len() + 1);
        out.push(self.tag());
        out.extend(body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let (&tag, body) = bytes.split_first().ok_or(DecodeError::Truncated { depth: 0 })?;
        Ok(match tag {
            TAG_INIT => Frame::Init(Box::new(HandshakeInit::from_canonical(body)?)),
            TAG_RESP => Frame::Resp(Box::new(HandshakeResp::from_canonical(body)?)),
            TAG_REQUEST => Frame::Request(TaskMsg::from_canonical(body)?),
            TAG_RESPONSE => Frame::Response(TaskMsg::from_canonical(body)?),
            TAG_TERMINAL => Frame::Terminal(Terminal::from_canonical(body)?),
            t => return Err(DecodeError::UnknownTag(t)),
        })
    }

    /// Session the frame belongs to.
    pub fn sid(&self) -> Digest {
        match self {
            Frame::Init(m) => m.sid(),
            Frame::Resp(m) => m.sid,
            Frame::Request(m) | Frame::Response(m) => m.sid,
            Frame::Terminal(m) => m.sid,
        }
    }

    /// Every leaf field path of an encoded frame's body.
    pub fn leaf_paths(bytes: &[u8]) -> Result<Vec<Vec<usize>>, DecodeError> {
        let (&tag, body) = bytes.split_first().ok_or(DecodeError::Truncated { depth: 0 })?;
        match tag {
            TAG_INIT => leaf_paths::<HandshakeInit>(body),
            TAG_RESP => leaf_paths::<HandshakeResp>(body),
            TAG_REQUEST | TAG_RESPONSE => leaf_paths::<TaskMsg>(body),
            TAG_TERMINAL => leaf_paths::<Terminal>(body),
            t => Err(DecodeError::UnknownTag(t)),
        }
    }
}

pub fn kind_name(tag: u8) -> &'static str {
    match tag {
        TAG_INIT => "handshake-init",
        TAG_RESP => "handshake-resp",
        TAG_REQUEST => "request",
        TAG_RESPONSE => "response",
        TAG_TERMINAL => "terminal",
        _ => "unknown",
    }
}
