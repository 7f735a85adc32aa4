//! Provider wire format.
//!
//! A request frame is a 1-octet operation tag followed by the canonical
//! encoding of the operation's fields. A response repeats the tag, then a
//! status octet: `0` followed by the canonical payload, or `1` followed by a
//! 4-octet big-endian error code.

use super::records::{AuthorizationToken, Endpoint};
use super::{Provider, ProviderError};
use crate::crypto::{PublicKey, Signature};
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::pki::Certificate;
use crate::policy::{Aid, ContactPolicy};

pub const TAG_REGISTER_USER: u8 = 1;
pub const TAG_REGISTER_AGENT: u8 = 2;
pub const TAG_UPDATE_POLICY: u8 = 3;
pub const TAG_DISCOVER: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentRegistration {
    pub uid: String,
    pub pwd: String,
    pub aid: Aid,
    pub endpoint: Endpoint,
    pub cp: ContactPolicy,
    pub tls_cert: Certificate,
    pub identity_pk: PublicKey,
    pub sig_id: Signature,
    pub sig_info: Signature,
}

impl Encode for AgentRegistration {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(&self.uid)
            .str(&self.pwd)
            .value(&self.aid)
            .value(&self.endpoint)
            .value(&self.cp)
            .value(&self.tls_cert)
            .value(&self.identity_pk)
            .value(&self.sig_id)
            .value(&self.sig_info);
    }
}

impl Decode for AgentRegistration {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AgentRegistration {
            uid: dec.string()?,
            pwd: dec.string()?,
            aid: dec.value()?,
            endpoint: dec.value()?,
            cp: dec.value()?,
            tls_cert: dec.value()?,
            identity_pk: dec.value()?,
            sig_id: dec.value()?,
            sig_info: dec.value()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    RegisterUser { uid: String, pwd: String, id_cert: Certificate },
    RegisterAgent(Box<AgentRegistration>),
    UpdatePolicy { uid: String, pwd: String, aid: Aid, cp: ContactPolicy },
    Discover { initiator: Aid, responder: Aid },
}

impl Request {
    pub fn tag(&self) -> u8 {
        match self {
            Request::RegisterUser { .. } => TAG_REGISTER_USER,
            Request::RegisterAgent(_) => TAG_REGISTER_AGENT,
            Request::UpdatePolicy { .. } => TAG_UPDATE_POLICY,
            Request::Discover { .. } => TAG_DISCOVER,
        }
    }

    pub fn to_frame(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        match self {
            Request::RegisterUser { uid, pwd, id_cert } => {
                enc.str(uid).str(pwd).value(id_cert);
            }
            Request::RegisterAgent(r) => r.encode_fields(&mut enc),
            Request::UpdatePolicy { uid, pwd, aid, cp } => {
                enc.str(uid).str(pwd).value(aid).value(cp);
            }
            Request::Discover { initiator, responder } => {
                enc.value(initiator).value(responder);
            }
        }
        let mut out = vec![self.tag()];
        out.extend(enc.finish());
        out
    }

    pub fn from_frame(frame: &[u8]) -> Result<Self, DecodeError> {
        let (&tag, body) = frame.split_first().ok_or(DecodeError::Truncated { depth: 0 })?;
        let mut dec = Decoder::new(body);
        let req = match tag {
            TAG_REGISTER_USER => {
                Request::RegisterUser { uid: dec.string()?, pwd: dec.string()?, id_cert: dec.value()? }
            }
            TAG_REGISTER_AGENT => Request::RegisterAgent(Box::new(AgentRegistration::decode_fields(&mut dec)?)),
            TAG_UPDATE_POLICY => Request::UpdatePolicy {
                uid: dec.string()?,
                pwd: dec.string()?,
                aid: dec.value()?,
                cp: dec.value()?,
            },
            TAG_DISCOVER => Request::Discover { initiator: dec.value()?, responder: dec.value()? },
            t => return Err(DecodeError::UnknownTag(t)),
        };
        dec.finish()?;
        Ok(req)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    UserRegistered,
    AgentRegistered(Signature),
    PolicyUpdated,
    Authorized(Box<AuthorizationToken>),
}

/// Encodes a result for the operation identified by `tag`.
pub fn response_frame(tag: u8, result: &Result<Response, ProviderError>) -> Vec<u8> {
    let mut out = vec![tag];
    match result {
        Ok(resp) => {
            out.push(0);
            match resp {
                Response::UserRegistered | Response::PolicyUpdated => {}
                Response::AgentRegistered(sig) => out.extend(sig.to_canonical()),
                Response::Authorized(tok) => out.extend(tok.to_canonical()),
            }
        }
        Err(e) => {
            out.push(1);
            out.extend(e.code().to_be_bytes());
        }
    }
    out
}

pub fn parse_response(frame: &[u8]) -> Result<Result<Response, ProviderError>, DecodeError> {
    let [tag, status, body @ ..] = frame else {
        return Err(DecodeError::Truncated { depth: 0 });
    };
    match status {
        0 => Ok(Ok(match *tag {
            TAG_REGISTER_USER | TAG_UPDATE_POLICY if body.is_empty() => {
                if *tag == TAG_REGISTER_USER {
                    Response::UserRegistered
                } else {
                    Response::PolicyUpdated
                }
            }
            TAG_REGISTER_AGENT => Response::AgentRegistered(Signature::from_canonical(body)?),
            TAG_DISCOVER => Response::Authorized(Box::new(AuthorizationToken::from_canonical(body)?)),
            TAG_REGISTER_USER | TAG_UPDATE_POLICY => return Err(DecodeError::Trailing),
            t => return Err(DecodeError::UnknownTag(t)),
        })),
        1 => {
            let code: [u8; 4] = body.try_into().map_err(|_| DecodeError::Width { expected: 4, got: body.len() })?;
            Ok(Err(ProviderError::from_code(u32::from_be_bytes(code))))
        }
        _ => Err(DecodeError::Invalid("status")),
    }
}

impl Provider {
    /// Serves one request frame received from the channel identity `from`.
    /// Discovery is only answered for the authenticated initiator itself.
    pub fn handle_frame(&self, from: &str, frame: &[u8]) -> Vec<u8> {
        let tag = frame.first().copied().unwrap_or(0);
        let result = match Request::from_frame(frame) {
            Err(_) => Err(ProviderError::Malformed),
            Ok(Request::RegisterUser { uid, pwd, id_cert }) => {
                self.register_user(&uid, &pwd, id_cert).map(|_| Response::UserRegistered)
            }
            Ok(Request::RegisterAgent(r)) => self.register_agent(*r).map(Response::AgentRegistered),
            Ok(Request::UpdatePolicy { uid, pwd, aid, cp }) => {
                self.update_policy(&uid, &pwd, &aid, cp).map(|_| Response::PolicyUpdated)
            }
            Ok(Request::Discover { initiator, responder }) => {
                if initiator.as_str() != from {
                    Err(ProviderError::AuthFailed)
                } else {
                    self.discover(&initiator, &responder).map(|t| Response::Authorized(Box::new(t)))
                }
            }
        };
        response_frame(tag, &result)
    }
}
