//! Per-session state machine for both roles.

use std::collections::VecDeque;

use rand::RngCore;

use super::commit::{ApprovalKind, ChainCommitment, ReplayGuard, UserSigner, Approval, commitment_payload};
use super::messages::{derive_sid, session_key, Frame, HandshakeInit, HandshakeResp, TaskMsg, Terminal, TerminalReason, SID_NONCE_LEN};
use super::transcript::{Transcript, TranscriptDir};
use super::{AgentKeys, Executor, Fault, Role, SessionError, Status};
use crate::crypto::{sig_verify, verify_step, ChainCursor, Digest, HashChain, NextTok, PublicKey};
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::policy::{effective_session_policy, Aid, ResponderPolicy, Tick};
use crate::provider::{AuthorizationToken, ProviderKeys};

#[derive(Debug, Clone)]
struct OwnChain {
    chain: HashChain,
    /// Tokens not yet revealed; the next one opens index `remaining - 1`.
    remaining: u64,
    opening: Option<ChainCommitment>,
}

/// Pre-built chains for one session, each with its commitment. Used
/// directly by the C-session orchestrator.
#[derive(Debug, Clone)]
pub struct InitiatorPlan {
    pub task_digest: Digest,
    pub sid_nonce: [u8; SID_NONCE_LEN],
    pub chains: Vec<(HashChain, ChainCommitment)>,
    pub delta: Tick,
    /// Upper bound on the session expiry, e.g. a global deadline.
    pub t_exp_cap: Option<Tick>,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub role: Role,
    pub sid: Digest,
    pub self_aid: Aid,
    pub peer_aid: Aid,
    k_ses: Option<Digest>,
    r1: Option<[u8; 32]>,
    own: VecDeque<OwnChain>,
    peer: Option<ChainCursor>,
    peer_root: Option<Digest>,
    peer_user_pk: PublicKey,
    last_sent_tok: Option<Digest>,
    last_recv_tok: Option<Digest>,
    /// Initiator tokens: left to reveal (initiator) or to accept (responder).
    pub ctr_icp: u64,
    /// Responder tokens: left to accept (initiator) or to reveal (responder).
    pub ctr_rcp: u64,
    pub q_icp: u64,
    pub q_rcp: u64,
    pub delta: Tick,
    pub t_exp: Tick,
    pub status: Status,
    awaiting: bool,
    /// Ended locally on a budget or clock check; the peer has not been told.
    untold: bool,
    pub requests: u64,
    pub responses: u64,
    pub fault: Option<(Fault, Role)>,
    pub transcript: Transcript,
}

/// What the responder sends back for a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Response(TaskMsg),
    Terminal(Terminal),
}

impl Reply {
    pub fn into_frame(self) -> Frame {
        match self {
            Reply::Response(m) => Frame::Response(m),
            Reply::Terminal(t) => Frame::Terminal(t),
        }
    }
}

/// Final audit record of a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSummary {
    pub sid: Digest,
    pub role: Role,
    pub self_aid: Aid,
    pub peer_aid: Aid,
    pub requests: u64,
    pub responses: u64,
    pub own_revealed: u64,
    pub peer_accepted: u64,
    pub cause: Status,
    pub fault: Option<Fault>,
    pub accountable: Option<Role>,
}

impl Encode for SessionSummary {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.value(&self.sid)
            .value(&self.role)
            .value(&self.self_aid)
            .value(&self.peer_aid)
            .u64(self.requests)
            .u64(self.responses)
            .u64(self.own_revealed)
            .u64(self.peer_accepted)
            .value(&self.cause)
            .option(self.fault.as_ref())
            .option(self.accountable.as_ref());
    }
}

impl Decode for SessionSummary {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(SessionSummary {
            sid: dec.value()?,
            role: dec.value()?,
            self_aid: dec.value()?,
            peer_aid: dec.value()?,
            requests: dec.u64()?,
            responses: dec.u64()?,
            own_revealed: dec.u64()?,
            peer_accepted: dec.u64()?,
            cause: dec.value()?,
            fault: dec.option()?,
            accountable: dec.option()?,
        })
    }
}

fn random_array<const N: usize>(rng: &mut dyn RngCore) -> [u8; N] {
    let mut b = [0u8; N];
    rng.fill_bytes(&mut b);
    b
}

/// Starts a session with a single freshly built chain of length `q`,
/// committed directly by the user.
#[allow(clippy::too_many_arguments)]
pub fn initiate(
    keys: &mut AgentKeys,
    auth: AuthorizationToken,
    task_digest: Digest,
    q: u64,
    delta: Tick,
    user: &mut dyn UserSigner,
    request: Vec<u8>,
    now: Tick,
    rng: &mut dyn RngCore,
) -> Result<(HandshakeInit, SessionState), SessionError> {
    if q == 0 {
        return Err(SessionError::InvalidParameter("message budget must be positive"));
    }
    let sid_nonce = random_array(rng);
    let sid = derive_sid(&task_digest, &keys.aid, &auth.responder.aid, &sid_nonce);
    let chain = HashChain::build(keys.chain_key(), sid.as_bytes(), keys.aid.as_str(), auth.responder.aid.as_str(), 0, q)?;
    let approval = Approval { kind: ApprovalKind::Icp, value: chain.terminal(), budget: q };
    let sig = user.approve(&approval).ok_or(SessionError::UserRefused)?;
    let plan = InitiatorPlan {
        task_digest,
        sid_nonce,
        chains: vec![(chain, ChainCommitment::Direct { sig })],
        delta,
        t_exp_cap: None,
    };
    initiate_prepared(keys, auth, plan, request, now, rng)
}

pub fn initiate_prepared(
    keys: &mut AgentKeys,
    auth: AuthorizationToken,
    plan: InitiatorPlan,
    request: Vec<u8>,
    now: Tick,
    rng: &mut dyn RngCore,
) -> Result<(HandshakeInit, SessionState), SessionError> {
    if plan.delta == 0 {
        return Err(SessionError::InvalidParameter("time budget must be positive"));
    }
    if plan.chains.is_empty() {
        return Err(SessionError::InvalidParameter("no chains"));
    }
    if auth.initiator_aid != keys.aid {
        return Err(SessionError::InvalidParameter("grant issued to another initiator"));
    }
    let responder = auth.responder.aid.clone();
    let sid = derive_sid(&plan.task_digest, &keys.aid, &responder, &plan.sid_nonce);
    if plan.chains.iter().any(|(c, _)| c.sid() != sid.as_bytes() || c.peer_aid() != responder.as_str()) {
        return Err(SessionError::InvalidParameter("chain not bound to this session"));
    }
    let peer_user_pk = auth.responder.user_cert.public_key().ok_or(SessionError::InvalidParameter("responder cert"))?;
    let q: u64 = plan.chains.iter().map(|(c, _)| c.len()).sum();
    let mut own: VecDeque<OwnChain> = plan
        .chains
        .into_iter()
        .map(|(chain, c)| OwnChain { remaining: chain.len(), chain, opening: Some(c) })
        .collect();
    let commitment = own[0].opening.take().expect("first chain has a commitment");
    let mut state = SessionState {
        role: Role::Initiator,
        sid,
        self_aid: keys.aid.clone(),
        peer_aid: responder,
        k_ses: None,
        r1: None,
        own,
        peer: None,
        peer_root: None,
        peer_user_pk,
        last_sent_tok: None,
        last_recv_tok: None,
        ctr_icp: q,
        ctr_rcp: 0,
        q_icp: q,
        q_rcp: 0,
        delta: plan.delta,
        t_exp: plan.t_exp_cap.map_or(now + plan.delta, |cap| cap.min(now + plan.delta)),
        status: Status::Handshaking,
        awaiting: true,
        untold: false,
        requests: 1,
        responses: 0,
        fault: None,
        transcript: Transcript::new(sid),
    };
    let (tok, _) = state.reveal_next().expect("fresh chain has tokens");
    state.ctr_icp -= 1;
    let r1 = random_array(rng);
    let mut m0 = HandshakeInit {
        r1,
        sid_nonce: plan.sid_nonce,
        task_digest: plan.task_digest,
        info: keys.info.clone(),
        q,
        delta: plan.delta,
        tok,
        commitment,
        auth,
        request,
        sig_init: crate::crypto::Signature::blank(),
    };
    m0.sig_init = keys.sign(&m0.signed_payload())?;
    state.r1 = Some(r1);
    state.transcript.push(TranscriptDir::Sent, &Frame::Init(Box::new(m0.clone())));
    Ok((m0, state))
}

/// Everything the responder consults while answering a handshake.
pub struct ResponderCtx<'a> {
    pub keys: &'a AgentKeys,
    pub ca: &'a PublicKey,
    pub provider: &'a ProviderKeys,
    pub rcp: Option<&'a ResponderPolicy>,
    pub user: &'a mut dyn UserSigner,
    pub guard: &'a mut ReplayGuard,
    pub executor: &'a mut dyn Executor,
    pub now: Tick,
    pub rng: &'a mut dyn RngCore,
}

fn blame(fault: Fault, accountable: Role) -> SessionError {
    SessionError::Rejected { fault, accountable }
}

pub fn respond(ctx: ResponderCtx<'_>, m0: &HandshakeInit) -> Result<(HandshakeResp, SessionState), SessionError> {
    let bad = |f| blame(f, Role::Initiator);
    let me = &ctx.keys.aid;
    if m0.auth.responder.aid != *me
        || m0.auth.initiator_aid != m0.info.aid
        || m0.auth.initiator_pk != m0.info.metadata.identity_pk
    {
        return Err(bad(Fault::WrongPeer));
    }
    if !m0.auth.provider_sig_valid(&ctx.provider.ta_pk) {
        return Err(bad(Fault::BadProviderSig));
    }
    if ctx.guard.nonces.contains(&m0.auth.nonce) {
        return Err(bad(Fault::ReplayedNonce));
    }
    let pk_user_i = m0.info.verify(ctx.ca, ctx.provider).map_err(|_| bad(Fault::BadUserSig))?;
    if !sig_verify(&m0.info.metadata.identity_pk, &m0.signed_payload(), &m0.sig_init) {
        return Err(bad(Fault::BadInitiatorSig));
    }
    let sid = m0.sid();
    let Some(terminal) = m0.tok.terminal else {
        return Err(bad(Fault::BadToken));
    };
    let n = m0.tok.index.checked_add(1).ok_or(bad(Fault::BadToken))?;
    if m0.q == 0 || m0.delta == 0 || n > m0.q {
        return Err(bad(Fault::CounterMismatch));
    }
    m0.commitment.verify(ApprovalKind::Icp, &pk_user_i, &terminal, n, ctx.guard).map_err(bad)?;
    if !verify_step(&terminal, &m0.tok, sid.as_bytes(), me.as_str()) {
        return Err(bad(Fault::BadToken));
    }
    let rcp = ctx.rcp.ok_or(SessionError::NoPolicy)?;
    let (q_r, delta_r) = effective_session_policy(m0.q, m0.delta, rcp.q, rcp.delta);
    let chain = HashChain::build(ctx.keys.chain_key(), sid.as_bytes(), me.as_str(), m0.info.aid.as_str(), 0, q_r)?;
    let approval = Approval { kind: ApprovalKind::Rcp, value: chain.terminal(), budget: q_r };
    let sig_rcp = ctx.user.approve(&approval).ok_or(SessionError::UserRefused)?;

    ctx.guard.nonces.insert(m0.auth.nonce);
    m0.commitment.record(&terminal, ctx.guard);

    let mut state = SessionState {
        role: Role::Responder,
        sid,
        self_aid: me.clone(),
        peer_aid: m0.info.aid.clone(),
        k_ses: None,
        r1: None,
        own: VecDeque::from([OwnChain { remaining: q_r, chain, opening: None }]),
        peer: Some(ChainCursor { head: m0.tok.value, head_index: m0.tok.index }),
        peer_root: m0.commitment.root(),
        peer_user_pk: pk_user_i,
        last_sent_tok: None,
        last_recv_tok: Some(m0.tok.value),
        ctr_icp: m0.q - 1,
        ctr_rcp: q_r,
        q_icp: m0.q,
        q_rcp: q_r,
        delta: delta_r,
        t_exp: ctx.now + delta_r,
        status: Status::Open,
        awaiting: false,
        untold: false,
        requests: 1,
        responses: 0,
        fault: None,
        transcript: Transcript::new(sid),
    };
    state.transcript.push(TranscriptDir::Received, &Frame::Init(Box::new(m0.clone())));
    let response = ctx.executor.execute(&m0.request);
    let (tok, _) = state.reveal_next().expect("fresh chain has tokens");
    state.ctr_rcp -= 1;
    state.responses = 1;
    let r2 = random_array(ctx.rng);
    let k_ses = session_key(&m0.r1, &r2);
    state.k_ses = Some(k_ses);
    let mut m1 = HandshakeResp {
        sid,
        r2,
        q: q_r,
        delta: delta_r,
        tok,
        icp_echo: m0.tok.value,
        sig_rcp,
        response,
        tag: Digest([0; 32]),
    };
    m1.tag = m1.compute_tag(&k_ses);
    state.transcript.push(TranscriptDir::Sent, &Frame::Resp(Box::new(m1.clone())));
    Ok((m1, state))
}

impl SessionState {
    pub fn k_ses(&self) -> Option<&Digest> {
        self.k_ses.as_ref()
    }

    /// Highest own-chain index still held in memory for the current chain.
    pub fn own_retained_top(&self) -> Option<u64> {
        self.own.iter().find(|c| c.remaining > 0).or(self.own.back()).and_then(|c| c.chain.retained_top())
    }

    /// Index the next own token would open on the current chain.
    pub fn own_next_index(&self) -> Option<u64> {
        self.own.iter().find(|c| c.remaining > 0).map(|c| c.remaining - 1)
    }

    pub fn peer_cursor(&self) -> Option<&ChainCursor> {
        self.peer.as_ref()
    }

    pub fn is_awaiting(&self) -> bool {
        self.awaiting
    }

    fn reveal_next(&mut self) -> Option<(NextTok, Option<ChainCommitment>)> {
        while self.own.front().is_some_and(|c| c.remaining == 0) && self.own.len() > 1 {
            self.own.pop_front();
        }
        let cur = self.own.front_mut()?;
        if cur.remaining == 0 {
            return None;
        }
        let idx = cur.remaining - 1;
        let tok = cur.chain.token(idx)?;
        cur.remaining = idx;
        cur.chain.forget_above(idx);
        let opening = if idx + 1 == cur.chain.len() { cur.opening.take() } else { None };
        self.last_sent_tok = Some(tok.value);
        Some((tok, opening))
    }

    /// Aborts the session, recording who is to blame.
    pub fn abort(&mut self, fault: Fault, accountable: Role) -> SessionError {
        self.status = Status::Aborted;
        self.fault = Some((fault, accountable));
        blame(fault, accountable)
    }

    fn expect_sid(&mut self, sid: &Digest) -> Result<(), SessionError> {
        if *sid != self.sid {
            return Err(blame(Fault::UnknownSession, self.role.other()));
        }
        Ok(())
    }

    fn terminal(&self, reason: TerminalReason) -> Terminal {
        Terminal { sid: self.sid, reason, tag: self.k_ses.map(|k| Terminal::compute_tag(&self.sid, reason, &k)) }
    }

    /// Initiator: processes `m1`, returning the first response.
    pub fn handle_handshake_resp(&mut self, m1: &HandshakeResp, now: Tick) -> Result<Vec<u8>, SessionError> {
        if self.role != Role::Initiator {
            return Err(SessionError::InvalidState("not awaiting a handshake response"));
        }
        self.expect_sid(&m1.sid)?;
        if self.status != Status::Handshaking {
            // a second m1 for a session that is already past its handshake
            return Err(blame(Fault::Unexpected, Role::Responder));
        }
        if now > self.t_exp {
            self.status = Status::Expired;
            return Err(SessionError::Expired);
        }
        self.transcript.push(TranscriptDir::Received, &Frame::Resp(Box::new(m1.clone())));
        let r1 = self.r1.expect("initiator keeps r1");
        let k_ses = session_key(&r1, &m1.r2);
        if m1.compute_tag(&k_ses) != m1.tag {
            return Err(self.abort(Fault::BadTag, Role::Responder));
        }
        if Some(m1.icp_echo) != self.last_sent_tok {
            return Err(self.abort(Fault::BadToken, Role::Responder));
        }
        if m1.q == 0 || m1.q > self.q_icp || m1.delta == 0 || m1.delta > self.delta {
            return Err(self.abort(Fault::CounterMismatch, Role::Responder));
        }
        let Some(terminal) = m1.tok.terminal else {
            return Err(self.abort(Fault::BadToken, Role::Responder));
        };
        if m1.tok.index.checked_add(1) != Some(m1.q) {
            return Err(self.abort(Fault::BadToken, Role::Responder));
        }
        let payload = commitment_payload(ApprovalKind::Rcp, &terminal, m1.q);
        if !sig_verify(&self.peer_user_pk, &payload, &m1.sig_rcp) {
            return Err(self.abort(Fault::BadUserSig, Role::Responder));
        }
        if !verify_step(&terminal, &m1.tok, self.sid.as_bytes(), self.self_aid.as_str()) {
            return Err(self.abort(Fault::BadToken, Role::Responder));
        }
        self.k_ses = Some(k_ses);
        self.peer = Some(ChainCursor { head: m1.tok.value, head_index: m1.tok.index });
        self.last_recv_tok = Some(m1.tok.value);
        self.q_rcp = m1.q;
        self.ctr_rcp = m1.q - 1;
        self.t_exp = self.t_exp.min(now + m1.delta);
        self.status = Status::Open;
        self.awaiting = false;
        self.responses = 1;
        Ok(m1.response.clone())
    }

    /// Initiator: spends the next own token on a request.
    pub fn send_request(&mut self, payload: Vec<u8>, now: Tick) -> Result<TaskMsg, SessionError> {
        if self.role != Role::Initiator {
            return Err(SessionError::InvalidState("only the initiator sends requests"));
        }
        if self.status != Status::Open {
            return Err(SessionError::InvalidState("session not open"));
        }
        if self.awaiting {
            return Err(SessionError::InvalidState("awaiting response"));
        }
        let ended = if now > self.t_exp {
            Some((Status::Expired, SessionError::Expired))
        } else if self.ctr_icp == 0 {
            Some((Status::Exhausted, SessionError::OwnBudgetExhausted))
        } else if self.ctr_rcp == 0 {
            Some((Status::Exhausted, SessionError::PeerBudgetExhausted))
        } else {
            None
        };
        if let Some((status, err)) = ended {
            self.status = status;
            self.untold = true;
            return Err(err);
        }
        let echo = self.last_recv_tok.expect("open session has a peer token");
        let (tok, opening) = self.reveal_next().ok_or(SessionError::OwnBudgetExhausted)?;
        let mut msg = TaskMsg { sid: self.sid, payload, tok, echo, opening, tag: Digest([0; 32]) };
        msg.tag = msg.compute_tag(self.k_ses.as_ref().expect("open session has a key"), "request");
        self.ctr_icp -= 1;
        self.awaiting = true;
        self.requests += 1;
        self.transcript.push(TranscriptDir::Sent, &Frame::Request(msg.clone()));
        Ok(msg)
    }

    /// Responder: checks budget and expiry first, then the tag and the
    /// initiator's token, then executes.
    pub fn handle_request(
        &mut self,
        msg: &TaskMsg,
        executor: &mut dyn Executor,
        guard: &mut ReplayGuard,
        now: Tick,
    ) -> Result<Reply, SessionError> {
        if self.role != Role::Responder {
            return Err(SessionError::InvalidState("only the responder handles requests"));
        }
        self.expect_sid(&msg.sid)?;
        match self.status {
            Status::Open => {}
            Status::Exhausted => return Ok(Reply::Terminal(self.terminal(TerminalReason::QuotaExhausted))),
            Status::Expired => return Ok(Reply::Terminal(self.terminal(TerminalReason::Expired))),
            _ => return Err(SessionError::InvalidState("session not open")),
        }
        self.transcript.push(TranscriptDir::Received, &Frame::Request(msg.clone()));
        // Tag and echo first: a stale or forged request is the initiator's
        // fault even when the budget is already spent.
        let k_ses = self.k_ses.expect("responder key set at handshake");
        if msg.compute_tag(&k_ses, "request") != msg.tag {
            return Err(self.abort(Fault::BadTag, Role::Initiator));
        }
        if Some(msg.echo) != self.last_sent_tok {
            return Err(self.abort(Fault::BadToken, Role::Initiator));
        }
        if self.ctr_rcp == 0 || self.ctr_icp == 0 {
            self.status = Status::Exhausted;
            let t = self.terminal(TerminalReason::QuotaExhausted);
            self.transcript.push(TranscriptDir::Sent, &Frame::Terminal(t.clone()));
            return Ok(Reply::Terminal(t));
        }
        if now > self.t_exp {
            self.status = Status::Expired;
            let t = self.terminal(TerminalReason::Expired);
            self.transcript.push(TranscriptDir::Sent, &Frame::Terminal(t.clone()));
            return Ok(Reply::Terminal(t));
        }
        let cursor = self.peer.clone().expect("responder has a peer cursor");
        let next_cursor = match (&msg.opening, cursor.remaining()) {
            (None, r) if r > 0 => {
                let mut c = cursor;
                if !c.accept(&msg.tok, self.sid.as_bytes(), self.self_aid.as_str()) {
                    return Err(self.abort(Fault::BadToken, Role::Initiator));
                }
                c
            }
            (Some(opening), 0) => {
                let Some(terminal) = msg.tok.terminal else {
                    return Err(self.abort(Fault::BadToken, Role::Initiator));
                };
                let n = msg.tok.index.saturating_add(1);
                if n > self.ctr_icp {
                    return Err(self.abort(Fault::CounterMismatch, Role::Initiator));
                }
                if opening.root() != self.peer_root {
                    return Err(self.abort(Fault::BadProof, Role::Initiator));
                }
                if let Err(f) = opening.verify(ApprovalKind::Icp, &self.peer_user_pk, &terminal, n, guard) {
                    return Err(self.abort(f, Role::Initiator));
                }
                if !verify_step(&terminal, &msg.tok, self.sid.as_bytes(), self.self_aid.as_str()) {
                    return Err(self.abort(Fault::BadToken, Role::Initiator));
                }
                opening.record(&terminal, guard);
                ChainCursor { head: msg.tok.value, head_index: msg.tok.index }
            }
            _ => return Err(self.abort(Fault::BadToken, Role::Initiator)),
        };
        self.peer = Some(next_cursor);
        self.last_recv_tok = Some(msg.tok.value);
        self.ctr_icp -= 1;
        self.requests += 1;
        let payload = executor.execute(&msg.payload);
        let (tok, _) = self.reveal_next().expect("ctr_rcp > 0 implies a token");
        self.ctr_rcp -= 1;
        self.responses += 1;
        let mut resp = TaskMsg { sid: self.sid, payload, tok, echo: msg.tok.value, opening: None, tag: Digest([0; 32]) };
        resp.tag = resp.compute_tag(&k_ses, "response");
        self.transcript.push(TranscriptDir::Sent, &Frame::Response(resp.clone()));
        Ok(Reply::Response(resp))
    }

    /// Initiator: verifies a response against the responder's chain.
    pub fn handle_response(&mut self, msg: &TaskMsg, now: Tick) -> Result<Vec<u8>, SessionError> {
        if self.role != Role::Initiator {
            return Err(SessionError::InvalidState("only the initiator handles responses"));
        }
        self.expect_sid(&msg.sid)?;
        match self.status {
            Status::Open => {}
            Status::Handshaking => return Err(SessionError::InvalidState("session not open")),
            // nothing was outstanding, so the responder sent it unasked
            _ if !self.awaiting => return Err(blame(Fault::Unexpected, Role::Responder)),
            _ => return Err(SessionError::InvalidState("session ended while a response was in flight")),
        }
        self.transcript.push(TranscriptDir::Received, &Frame::Response(msg.clone()));
        if !self.awaiting {
            return Err(self.abort(Fault::Unexpected, Role::Responder));
        }
        if now > self.t_exp {
            self.status = Status::Expired;
            return Err(SessionError::Expired);
        }
        let k_ses = self.k_ses.expect("open session has a key");
        if msg.compute_tag(&k_ses, "response") != msg.tag {
            return Err(self.abort(Fault::BadTag, Role::Responder));
        }
        if Some(msg.echo) != self.last_sent_tok || msg.opening.is_some() {
            return Err(self.abort(Fault::BadToken, Role::Responder));
        }
        if self.ctr_rcp == 0 {
            return Err(self.abort(Fault::CounterMismatch, Role::Responder));
        }
        let mut cursor = self.peer.clone().expect("open session has a peer cursor");
        if !cursor.accept(&msg.tok, self.sid.as_bytes(), self.self_aid.as_str()) {
            return Err(self.abort(Fault::BadToken, Role::Responder));
        }
        self.peer = Some(cursor);
        self.last_recv_tok = Some(msg.tok.value);
        self.ctr_rcp -= 1;
        self.awaiting = false;
        self.responses += 1;
        Ok(msg.payload.clone())
    }

    /// Either role: a session-ending notice from the peer.
    pub fn handle_terminal(&mut self, t: &Terminal) -> Result<Status, SessionError> {
        self.expect_sid(&t.sid)?;
        if self.status.is_terminal() {
            if let Some(k) = &self.k_ses {
                if t.tag != Some(Terminal::compute_tag(&self.sid, t.reason, k)) {
                    return Err(blame(Fault::BadTag, self.role.other()));
                }
            }
            let frame = Frame::Terminal(t.clone()).to_bytes();
            let again = self.transcript.entries.iter().any(|(d, f)| *d == TranscriptDir::Received && *f == frame);
            if again {
                return Err(blame(Fault::Unexpected, self.role.other()));
            }
            return Ok(self.status);
        }
        self.transcript.push(TranscriptDir::Received, &Frame::Terminal(t.clone()));
        if let Some(k) = &self.k_ses {
            if t.tag != Some(Terminal::compute_tag(&self.sid, t.reason, k)) {
                return Err(self.abort(Fault::BadTag, self.role.other()));
            }
        }
        self.status = match t.reason {
            TerminalReason::QuotaExhausted => Status::Exhausted,
            TerminalReason::Expired => Status::Expired,
            TerminalReason::Aborted => Status::Aborted,
            TerminalReason::Closed => Status::Closed,
        };
        Ok(self.status)
    }

    /// Closes the session (if still live) and returns a notice for the peer,
    /// also when the session already ended locally without one.
    pub fn close(&mut self) -> (SessionSummary, Option<Terminal>) {
        let reason = match self.status {
            Status::Handshaking | Status::Open => {
                self.status = Status::Closed;
                Some(TerminalReason::Closed)
            }
            Status::Exhausted if self.untold => Some(TerminalReason::QuotaExhausted),
            Status::Expired if self.untold => Some(TerminalReason::Expired),
            _ => None,
        };
        self.untold = false;
        let notice = reason.map(|r| {
            let t = self.terminal(r);
            self.transcript.push(TranscriptDir::Sent, &Frame::Terminal(t.clone()));
            t
        });
        (self.summary(), notice)
    }

    /// Notice telling the peer this session was aborted locally.
    pub fn abort_notice(&self) -> Terminal {
        self.terminal(TerminalReason::Aborted)
    }

    pub fn summary(&self) -> SessionSummary {
        let (own_total, own_left, peer_total, peer_left) = match self.role {
            Role::Initiator => (self.q_icp, self.ctr_icp, self.q_rcp, self.ctr_rcp),
            Role::Responder => (self.q_rcp, self.ctr_rcp, self.q_icp, self.ctr_icp),
        };
        SessionSummary {
            sid: self.sid,
            role: self.role,
            self_aid: self.self_aid.clone(),
            peer_aid: self.peer_aid.clone(),
            requests: self.requests,
            responses: self.responses,
            own_revealed: own_total - own_left,
            peer_accepted: peer_total - peer_left,
            cause: self.status,
            fault: self.fault.map(|f| f.0),
            accountable: self.fault.map(|f| f.1),
        }
    }
}
