//! Session transcripts and third-party audit.
//!
//! A transcript log is a sequence of records, each a 4-octet big-endian
//! length followed by the canonical encoding of `(direction, frame)`.
//! Since `m0` and `m1` carry both key halves, anyone holding a transcript
//! can recompute the session key and check every signature, tag and token,
//! and name the side that first broke the protocol.

use std::collections::HashSet;

use super::commit::{commitment_payload, ApprovalKind, ReplayGuard};
use super::messages::{session_key, Frame};
use super::{Fault, Role};
use crate::crypto::{sig_verify, verify_step, ChainCursor, Digest, PublicKey};
use crate::encoding::{DecodeError, Decoder, Encode, Encoder};
use crate::provider::ProviderKeys;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranscriptDir {
    Sent,
    Received,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub sid: Digest,
    pub entries: Vec<(TranscriptDir, Vec<u8>)>,
}

impl Transcript {
    pub fn new(sid: Digest) -> Self {
        Transcript { sid, entries: Vec::new() }
    }

    pub fn push(&mut self, dir: TranscriptDir, frame: &Frame) {
        self.entries.push((dir, frame.to_bytes()));
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u8]> {
        self.entries.iter().map(|(_, f)| f.as_slice())
    }

    pub fn to_log(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (dir, frame) in &self.entries {
            let mut enc = Encoder::new();
            enc.bool(*dir == TranscriptDir::Sent).bytes(frame);
            let rec = enc.finish();
            out.extend((rec.len() as u32).to_be_bytes());
            out.extend(rec);
        }
        out
    }

    pub fn from_log(sid: Digest, mut buf: &[u8]) -> Result<Self, DecodeError> {
        let mut entries = Vec::new();
        while !buf.is_empty() {
            let len_bytes: [u8; 4] = buf.get(..4).and_then(|b| b.try_into().ok()).ok_or(DecodeError::Truncated { depth: 0 })?;
            let len = u32::from_be_bytes(len_bytes) as usize;
            let rec = buf.get(4..4 + len).ok_or(DecodeError::Truncated { depth: 0 })?;
            let mut dec = Decoder::new(rec);
            let sent = dec.bool()?;
            let frame = dec.bytes()?.to_vec();
            dec.finish()?;
            entries.push((if sent { TranscriptDir::Sent } else { TranscriptDir::Received }, frame));
            buf = &buf[4 + len..];
        }
        Ok(Transcript { sid, entries })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub sid: Option<Digest>,
    pub requests: u64,
    pub responses: u64,
    /// Index of the first offending frame, what was wrong, and who sent it.
    pub violation: Option<(usize, Fault, Role)>,
}

impl Encode for AuditReport {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.option(self.sid.as_ref()).u64(self.requests).u64(self.responses);
        match &self.violation {
            Some((i, f, r)) => enc.nested(|e| {
                e.u64(*i as u64).value(f).value(r);
            }),
            None => enc.bytes(&[]),
        };
    }
}

struct Observer {
    sid: Digest,
    initiator: String,
    responder: String,
    k_ses: Digest,
    icp: ChainCursor,
    rcp: ChainCursor,
    icp_root: Option<Digest>,
    user_i: PublicKey,
    last_req: Digest,
    last_resp: Digest,
    guard: ReplayGuard,
    icp_left: u64,
    rcp_left: u64,
}

/// Replays the frames of one session (in wire order, duplicates from the
/// two sides' logs removed) and checks them as a passive verifier.
pub fn audit_transcript(frames: &[Vec<u8>], ca: &PublicKey, provider: &ProviderKeys) -> AuditReport {
    let mut report = AuditReport { sid: None, requests: 0, responses: 0, violation: None };
    let mut seen = HashSet::new();
    let ordered: Vec<&Vec<u8>> = frames.iter().filter(|f| seen.insert(f.as_slice())).collect();
    let mut obs: Option<Observer> = None;
    let mut init: Option<super::HandshakeInit> = None;
    for (i, raw) in ordered.iter().enumerate() {
        let sender_guess = match raw.first() {
            Some(&super::messages::TAG_INIT) | Some(&super::messages::TAG_REQUEST) => Role::Initiator,
            _ => Role::Responder,
        };
        let frame = match Frame::from_bytes(raw) {
            Ok(f) => f,
            Err(_) => {
                report.violation = Some((i, Fault::Malformed, sender_guess));
                return report;
            }
        };
        let res = match (&frame, &mut obs) {
            (Frame::Init(m0), None) if init.is_none() => {
                let check = audit_init(m0, ca, provider);
                if check.is_ok() {
                    report.sid = Some(m0.sid());
                    report.requests = 1;
                    init = Some((**m0).clone());
                }
                check.map_err(|f| (f, Role::Initiator))
            }
            (Frame::Resp(m1), None) => match &init {
                Some(m0) => audit_resp(m0, m1).map(|o| {
                    report.responses = 1;
                    obs = Some(o);
                }),
                None => Err((Fault::Unexpected, Role::Responder)),
            },
            (Frame::Request(m), Some(o)) => {
                let r = audit_request(o, m);
                if r.is_ok() {
                    report.requests += 1;
                }
                r.map_err(|f| (f, Role::Initiator))
            }
            (Frame::Response(m), Some(o)) => {
                let r = audit_response(o, m);
                if r.is_ok() {
                    report.responses += 1;
                }
                r.map_err(|f| (f, Role::Responder))
            }
            (Frame::Terminal(t), o) => match (o, &t.tag) {
                (Some(o), Some(tag)) if *tag == super::Terminal::compute_tag(&o.sid, t.reason, &o.k_ses) => Ok(()),
                (None, None) => Ok(()),
                _ => Err((Fault::BadTag, sender_guess)),
            },
            _ => Err((Fault::Unexpected, sender_guess)),
        };
        if let Err((f, who)) = res {
            report.violation = Some((i, f, who));
            return report;
        }
    }
    report
}

fn audit_init(m0: &super::HandshakeInit, ca: &PublicKey, provider: &ProviderKeys) -> Result<(), Fault> {
    if m0.auth.initiator_aid != m0.info.aid || m0.auth.initiator_pk != m0.info.metadata.identity_pk {
        return Err(Fault::WrongPeer);
    }
    if !m0.auth.provider_sig_valid(&provider.ta_pk) {
        return Err(Fault::BadProviderSig);
    }
    let user_i = m0.info.verify(ca, provider).map_err(|_| Fault::BadUserSig)?;
    if !sig_verify(&m0.info.metadata.identity_pk, &m0.signed_payload(), &m0.sig_init) {
        return Err(Fault::BadInitiatorSig);
    }
    let terminal = m0.tok.terminal.ok_or(Fault::BadToken)?;
    let n = m0.tok.index.checked_add(1).ok_or(Fault::BadToken)?;
    if m0.q == 0 || n > m0.q {
        return Err(Fault::CounterMismatch);
    }
    m0.commitment.verify(ApprovalKind::Icp, &user_i, &terminal, n, &ReplayGuard::default())?;
    if !verify_step(&terminal, &m0.tok, m0.sid().as_bytes(), m0.auth.responder.aid.as_str()) {
        return Err(Fault::BadToken);
    }
    Ok(())
}

fn audit_resp(m0: &super::HandshakeInit, m1: &super::HandshakeResp) -> Result<Observer, (Fault, Role)> {
    let bad = |f| (f, Role::Responder);
    let sid = m0.sid();
    if m1.sid != sid {
        return Err(bad(Fault::UnknownSession));
    }
    let k_ses = session_key(&m0.r1, &m1.r2);
    if m1.compute_tag(&k_ses) != m1.tag {
        return Err(bad(Fault::BadTag));
    }
    if m1.icp_echo != m0.tok.value {
        return Err(bad(Fault::BadToken));
    }
    if m1.q == 0 || m1.q > m0.q || m1.delta > m0.delta {
        return Err(bad(Fault::CounterMismatch));
    }
    let terminal = m1.tok.terminal.ok_or(bad(Fault::BadToken))?;
    if m1.tok.index.checked_add(1) != Some(m1.q) {
        return Err(bad(Fault::BadToken));
    }
    let user_r = m0.auth.responder.user_cert.public_key().ok_or(bad(Fault::BadUserSig))?;
    if !sig_verify(&user_r, &commitment_payload(ApprovalKind::Rcp, &terminal, m1.q), &m1.sig_rcp) {
        return Err(bad(Fault::BadUserSig));
    }
    let initiator = m0.info.aid.as_str().to_string();
    if !verify_step(&terminal, &m1.tok, sid.as_bytes(), &initiator) {
        return Err(bad(Fault::BadToken));
    }
    let mut guard = ReplayGuard::default();
    m0.commitment.record(&m0.tok.terminal.expect("checked in init"), &mut guard);
    Ok(Observer {
        sid,
        initiator,
        responder: m0.auth.responder.aid.as_str().to_string(),
        k_ses,
        icp: ChainCursor { head: m0.tok.value, head_index: m0.tok.index },
        rcp: ChainCursor { head: m1.tok.value, head_index: m1.tok.index },
        icp_root: m0.commitment.root(),
        user_i: m0.info.user_cert.public_key().expect("verified in init"),
        last_req: m0.tok.value,
        last_resp: m1.tok.value,
        guard,
        icp_left: m0.q - 1,
        rcp_left: m1.q - 1,
    })
}

fn audit_request(o: &mut Observer, m: &super::TaskMsg) -> Result<(), Fault> {
    if m.sid != o.sid {
        return Err(Fault::UnknownSession);
    }
    if m.compute_tag(&o.k_ses, "request") != m.tag {
        return Err(Fault::BadTag);
    }
    if m.echo != o.last_resp || o.icp_left == 0 {
        return Err(Fault::BadToken);
    }
    match (&m.opening, o.icp.remaining()) {
        (None, r) if r > 0 => {
            if !o.icp.accept(&m.tok, o.sid.as_bytes(), &o.responder) {
                return Err(Fault::BadToken);
            }
        }
        (Some(c), 0) => {
            let terminal = m.tok.terminal.ok_or(Fault::BadToken)?;
            let n = m.tok.index.saturating_add(1);
            if c.root() != o.icp_root {
                return Err(Fault::BadProof);
            }
            c.verify(ApprovalKind::Icp, &o.user_i, &terminal, n, &o.guard)?;
            if !verify_step(&terminal, &m.tok, o.sid.as_bytes(), &o.responder) {
                return Err(Fault::BadToken);
            }
            c.record(&terminal, &mut o.guard);
            o.icp = ChainCursor { head: m.tok.value, head_index: m.tok.index };
        }
        _ => return Err(Fault::BadToken),
    }
    o.icp_left -= 1;
    o.last_req = m.tok.value;
    Ok(())
}

fn audit_response(o: &mut Observer, m: &super::TaskMsg) -> Result<(), Fault> {
    if m.sid != o.sid {
        return Err(Fault::UnknownSession);
    }
    if m.compute_tag(&o.k_ses, "response") != m.tag {
        return Err(Fault::BadTag);
    }
    if m.echo != o.last_req || m.opening.is_some() || o.rcp_left == 0 {
        return Err(Fault::BadToken);
    }
    if !o.rcp.accept(&m.tok, o.sid.as_bytes(), &o.initiator) {
        return Err(Fault::BadToken);
    }
    o.rcp_left -= 1;
    o.last_resp = m.tok.value;
    Ok(())
}
