//! One-to-many sessions. An orchestrating initiator spreads a global budget
//! of `m` chains of length `n` over several responders, each reached through
//! an ordinary A-session whose chains are vouched for collectively:
//!
//! * static: the responders are known up front, all `m` chains are built
//!   for their sessions and the user signs a Merkle root over the terminals;
//! * dynamic: the user signs a Merkle root over `m` one-time public keys and
//!   the orchestrator later spends one key per chain it opens.

use std::cell::Cell;

use rand::RngCore;
use thiserror::Error;

use crate::asession::{
    derive_sid, initiate_prepared, respond, AgentKeys, Approval, ApprovalKind, ChainCommitment, Fault, Frame,
    HandshakeInit, HandshakeResp, InitiatorPlan, ResponderCtx, Role, SessionError, SessionState, SessionSummary,
    UserSigner, SID_NONCE_LEN,
};
use crate::crypto::{hash, CryptoError, Digest, HashChain, MerkleTree, OtsKeyPair, Signature};
use crate::encoding::{Encode, Encoder};
use crate::policy::{split_icp, Aid, ChainAssignment, InitiatorPolicy, PolicyError, Tick};
use crate::provider::{AuthorizationToken, ProviderError};

#[cfg(test)]
mod tests;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CSessionError {
    #[error("{planned} responders but only {chains} chains")]
    TooManyResponders { planned: usize, chains: u64 },
    #[error("user refused to sign")]
    UserRefused,
    #[error("no unused chain left for {0}")]
    NoChainLeft(Aid),
    #[error("global deadline passed")]
    GlobalExpired,
    #[error("global message budget exhausted")]
    GlobalQuotaExhausted,
    #[error("all delegated keys used")]
    ChainsExhausted,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl From<PolicyError> for CSessionError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::TooManyResponders { planned, chains } => CSessionError::TooManyResponders { planned, chains },
            other => CSessionError::InvalidParameter(other.to_string()),
        }
    }
}

/// Source of the current tick.
pub trait Clock {
    fn now(&self) -> Tick;
}

impl Clock for Cell<Tick> {
    fn now(&self) -> Tick {
        self.get()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Static,
    Dynamic,
}

#[derive(Debug, Clone)]
pub struct WorkPlan {
    pub mode: Mode,
    pub task_digest: Digest,
    pub icp: InitiatorPolicy,
    /// Static: the responders in visiting order. Dynamic: the candidates
    /// the next-responder hook picks from.
    pub responders: Vec<Aid>,
    /// Static only, parallel to `responders`.
    pub assignments: Vec<ChainAssignment>,
    /// Time budget asked of each component session.
    pub session_delta: Tick,
}

pub fn plan_static(task_digest: Digest, responders: Vec<Aid>, icp: InitiatorPolicy) -> Result<WorkPlan, CSessionError> {
    let assignments = split_icp(&icp, responders.len())?;
    let session_delta = icp.delta_tot;
    Ok(WorkPlan { mode: Mode::Static, task_digest, icp, responders, assignments, session_delta })
}

pub fn plan_dynamic(task_digest: Digest, candidates: Vec<Aid>, icp: InitiatorPolicy) -> Result<WorkPlan, CSessionError> {
    if candidates.is_empty() {
        return Err(CSessionError::InvalidParameter("no candidate responders".into()));
    }
    let session_delta = icp.delta_tot;
    Ok(WorkPlan { mode: Mode::Dynamic, task_digest, icp, responders: candidates, assignments: Vec::new(), session_delta })
}

pub fn fresh_sid_nonces(count: usize, rng: &mut dyn RngCore) -> Vec<[u8; SID_NONCE_LEN]> {
    (0..count)
        .map(|_| {
            let mut b = [0u8; SID_NONCE_LEN];
            rng.fill_bytes(&mut b);
            b
        })
        .collect()
}

/// The chains prepared for one responder of a static plan.
#[derive(Debug, Clone)]
pub struct ComponentSlot {
    pub responder: Aid,
    pub sid_nonce: [u8; SID_NONCE_LEN],
    pub sid: Digest,
    pub chains: Vec<(HashChain, ChainCommitment)>,
    pub used: bool,
}

#[derive(Debug, Clone)]
pub struct StaticCommitment {
    pub root: Digest,
    pub root_sig: Signature,
    pub n: u64,
    pub slots: Vec<ComponentSlot>,
}

impl StaticCommitment {
    pub fn slot_for(&mut self, responder: &Aid) -> Option<&mut ComponentSlot> {
        self.slots.iter_mut().find(|s| s.responder == *responder && !s.used)
    }
}

/// Builds every chain of a static plan, bound to its responder's session,
/// and has the user sign the Merkle root over their terminals.
pub fn commit_static(
    plan: &WorkPlan,
    keys: &AgentKeys,
    sid_nonces: &[[u8; SID_NONCE_LEN]],
    user: &mut dyn UserSigner,
) -> Result<StaticCommitment, CSessionError> {
    if plan.mode != Mode::Static || sid_nonces.len() != plan.responders.len() {
        return Err(CSessionError::InvalidParameter("one sid nonce per planned responder".into()));
    }
    let n = plan.icp.chain_len;
    let m = plan.icp.chain_count as usize;
    let mut built: Vec<Option<(usize, HashChain)>> = vec![None; m];
    let mut sids = Vec::with_capacity(plan.responders.len());
    for (k, (responder, asg)) in plan.responders.iter().zip(&plan.assignments).enumerate() {
        let sid = derive_sid(&plan.task_digest, &keys.aid, responder, &sid_nonces[k]);
        for &c in &asg.chains {
            let chain = HashChain::build(keys.chain_key(), sid.as_bytes(), keys.aid.as_str(), responder.as_str(), c, n)?;
            built[c as usize] = Some((k, chain));
        }
        sids.push(sid);
    }
    let built: Vec<(usize, HashChain)> = built.into_iter().map(|c| c.expect("every chain assigned")).collect();
    let terminals: Vec<Digest> = built.iter().map(|(_, c)| c.terminal()).collect();
    let tree = MerkleTree::build(&terminals)?;
    let root = tree.root();
    let root_sig = user
        .approve(&Approval { kind: ApprovalKind::IcpRoot, value: root, budget: n })
        .ok_or(CSessionError::UserRefused)?;
    let mut slots: Vec<ComponentSlot> = plan
        .responders
        .iter()
        .enumerate()
        .map(|(k, r)| ComponentSlot { responder: r.clone(), sid_nonce: sid_nonces[k], sid: sids[k], chains: Vec::new(), used: false })
        .collect();
    for (c, (k, chain)) in built.into_iter().enumerate() {
        let proof = tree.prove(c)?;
        let commitment = ChainCommitment::Merkle { root, root_sig: root_sig.clone(), proof };
        slots[k].chains.push((chain, commitment));
    }
    Ok(StaticCommitment { root, root_sig, n, slots })
}

/// A batch of one-time keys delegated by the user.
#[derive(Debug)]
pub struct DynamicCommitment {
    ots: Vec<OtsKeyPair>,
    tree: MerkleTree,
    pub root: Digest,
    pub root_sig: Signature,
    pub n: u64,
    used_index: usize,
}

impl DynamicCommitment {
    pub fn used(&self) -> usize {
        self.used_index
    }

    pub fn capacity(&self) -> usize {
        self.ots.len()
    }
}

pub fn delegate_dynamic(
    m: u64,
    n: u64,
    q_tot: u64,
    user: &mut dyn UserSigner,
    rng: &mut (impl RngCore + rand::CryptoRng),
) -> Result<DynamicCommitment, CSessionError> {
    if m == 0 || n == 0 || m.checked_mul(n) != Some(q_tot) {
        return Err(CSessionError::InvalidParameter(format!("q_tot {q_tot} must equal m x n = {m} x {n}")));
    }
    let ots: Vec<OtsKeyPair> = (0..m).map(|_| OtsKeyPair::generate(rng)).collect();
    let leaves: Vec<Digest> = ots.iter().map(|k| k.public_key().digest()).collect();
    let tree = MerkleTree::build(&leaves)?;
    let root = tree.root();
    let root_sig = user
        .approve(&Approval { kind: ApprovalKind::IcpOtsRoot, value: root, budget: n })
        .ok_or(CSessionError::UserRefused)?;
    Ok(DynamicCommitment { ots, tree, root, root_sig, n, used_index: 0 })
}

/// Builds a chain for `(sid, responder)` and signs its terminal with the
/// next unused delegated key.
pub fn authorize_chain_dynamic(
    dc: &mut DynamicCommitment,
    keys: &AgentKeys,
    responder: &Aid,
    sid: &Digest,
) -> Result<(HashChain, ChainCommitment), CSessionError> {
    let idx = dc.used_index;
    if idx >= dc.ots.len() {
        return Err(CSessionError::ChainsExhausted);
    }
    let chain = HashChain::build(keys.chain_key(), sid.as_bytes(), keys.aid.as_str(), responder.as_str(), idx as u64, dc.n)?;
    let ots_sig = dc.ots[idx].sign(&crate::asession::ots_chain_payload(&chain.terminal(), dc.n))?;
    dc.used_index += 1;
    let commitment = ChainCommitment::Delegated {
        root: dc.root,
        root_sig: dc.root_sig.clone(),
        ots_pk: dc.ots[idx].public_key().clone(),
        ots_sig,
        proof: dc.tree.prove(idx)?,
    };
    Ok((chain, commitment))
}

/// Global counters of a running C-session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CSessionState {
    pub q_tot: u64,
    pub delta_tot: Tick,
    pub t_exp_global: Tick,
    pub ctr_global: u64,
}

impl CSessionState {
    pub fn new(q_tot: u64, delta_tot: Tick, now: Tick) -> Self {
        CSessionState { q_tot, delta_tot, t_exp_global: now + delta_tot, ctr_global: 0 }
    }

    /// Checks the global deadline, then the global budget, and takes one
    /// token from it.
    pub fn take(&mut self, now: Tick) -> Result<(), CSessionError> {
        if now > self.t_exp_global {
            return Err(CSessionError::GlobalExpired);
        }
        if self.ctr_global >= self.q_tot {
            return Err(CSessionError::GlobalQuotaExhausted);
        }
        self.ctr_global += 1;
        Ok(())
    }
}

/// Starts one component session from a prepared slot (static) or a freshly
/// authorized chain (dynamic). The session expiry is capped at the global
/// deadline.
#[allow(clippy::too_many_arguments)]
pub fn open_component_session(
    cs: &mut CSessionState,
    keys: &mut AgentKeys,
    chains: Vec<(HashChain, ChainCommitment)>,
    task_digest: Digest,
    sid_nonce: [u8; SID_NONCE_LEN],
    auth: AuthorizationToken,
    delta: Tick,
    request: Vec<u8>,
    now: Tick,
    rng: &mut dyn RngCore,
) -> Result<(HandshakeInit, SessionState), CSessionError> {
    if chains.is_empty() {
        return Err(CSessionError::NoChainLeft(auth.responder.aid.clone()));
    }
    let mut probe = cs.clone();
    probe.take(now)?;
    let plan = InitiatorPlan { task_digest, sid_nonce, chains, delta, t_exp_cap: Some(cs.t_exp_global) };
    let out = initiate_prepared(keys, auth, plan, request, now, rng)?;
    *cs = probe;
    Ok(out)
}

/// Responder side: the ordinary handshake checks, which include the Merkle
/// proof and, for delegated keys, the one-time signature and key reuse.
pub fn respond_component(ctx: ResponderCtx<'_>, m0: &HandshakeInit) -> Result<(HandshakeResp, SessionState), SessionError> {
    respond(ctx, m0)
}

/// The orchestrator's view of the world.
pub trait Link {
    fn initiator(&mut self) -> &mut AgentKeys;
    fn discover(&mut self, responder: &Aid) -> Result<AuthorizationToken, ProviderError>;
    /// Sends a frame and returns whatever came back, if anything.
    fn exchange(&mut self, to: &Aid, frame: Vec<u8>) -> Option<Vec<u8>>;
    fn notify(&mut self, to: &Aid, frame: Vec<u8>);
}

/// Stand-in for the planning model.
pub trait TaskHook {
    /// Payload for the next request to `responder`, or `None` when done with
    /// it. `round` counts from 0.
    fn next_request(&mut self, responder: &Aid, round: u64, last_response: Option<&[u8]>) -> Option<Vec<u8>>;
    /// Dynamic mode: who to contact next.
    fn next_responder(&mut self, hop: usize, last_response: Option<&[u8]>, candidates: &[Aid]) -> Option<Aid>;
}

/// Keeps asking until budgets run out; in dynamic mode picks the next
/// responder from a hash of the last response.
#[derive(Debug, Clone)]
pub struct StubTask {
    pub max_rounds: Option<u64>,
    pub max_hops: usize,
}

impl TaskHook for StubTask {
    fn next_request(&mut self, responder: &Aid, round: u64, _: Option<&[u8]>) -> Option<Vec<u8>> {
        if self.max_rounds.is_some_and(|m| round >= m) {
            return None;
        }
        Some(format!("{responder} step {round}").into_bytes())
    }

    fn next_responder(&mut self, hop: usize, last: Option<&[u8]>, candidates: &[Aid]) -> Option<Aid> {
        if hop >= self.max_hops || candidates.is_empty() {
            return None;
        }
        let h = hash(last.unwrap_or(b"start"));
        let pick = u64::from_be_bytes(h.0[..8].try_into().expect("8 bytes")) % candidates.len() as u64;
        Some(candidates[pick as usize].clone())
    }
}

#[derive(Debug)]
pub enum ChainSource {
    Static(StaticCommitment),
    Dynamic(DynamicCommitment),
}

#[derive(Debug)]
pub struct CSession {
    pub plan: WorkPlan,
    pub state: CSessionState,
    pub source: ChainSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentRecord {
    pub responder: Aid,
    pub summary: Option<SessionSummary>,
    pub error: Option<String>,
}

impl Encode for ComponentRecord {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.value(&self.responder).option(self.summary.as_ref());
        match &self.error {
            Some(e) => enc.str(e),
            None => enc.bytes(&[]),
        };
    }
}

/// Audit record of a whole C-session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CSessionReport {
    pub global: CSessionState,
    pub components: Vec<ComponentRecord>,
    pub halted: Option<CSessionError>,
}

impl CSessionReport {
    /// Tokens consumed across components, counted from their summaries.
    pub fn tokens_consumed(&self) -> u64 {
        self.components.iter().filter_map(|c| c.summary.as_ref()).map(|s| s.own_revealed).sum()
    }

    /// Same record framing as transcript logs: the global counters first,
    /// then one record per component.
    pub fn to_log(&self) -> Vec<u8> {
        let mut head = Encoder::new();
        head.u64(self.global.q_tot)
            .u64(self.global.delta_tot)
            .u64(self.global.t_exp_global)
            .u64(self.global.ctr_global)
            .str(&self.halted.as_ref().map(|e| e.to_string()).unwrap_or_default());
        let mut records = vec![head.finish()];
        records.extend(self.components.iter().map(|c| c.to_canonical()));
        let mut out = Vec::new();
        for r in records {
            out.extend((r.len() as u32).to_be_bytes());
            out.extend(r);
        }
        out
    }
}

impl CSession {
    pub fn new(plan: WorkPlan, source: ChainSource, now: Tick) -> Self {
        let state = CSessionState::new(plan.icp.q_tot, plan.icp.delta_tot, now);
        CSession { plan, state, source }
    }

    /// Tightens the global message cap below `m x n`.
    pub fn with_global_cap(mut self, q_tot: u64) -> Self {
        self.state.q_tot = q_tot.min(self.state.q_tot);
        self
    }
}

/// Runs the whole C-session, one component after another. A component
/// that aborts is recorded and the orchestrator moves on; global budget or
/// deadline exhaustion stops everything.
pub fn drive_csession(
    cs: &mut CSession,
    link: &mut dyn Link,
    task: &mut dyn TaskHook,
    clock: &dyn Clock,
    rng: &mut dyn RngCore,
) -> CSessionReport {
    let mut components = Vec::new();
    let mut halted = None;
    let mut hop = 0;
    let mut last: Option<Vec<u8>> = None;
    loop {
        let responder = match cs.plan.mode {
            Mode::Static => match cs.plan.responders.get(hop) {
                Some(r) => r.clone(),
                None => break,
            },
            Mode::Dynamic => match task.next_responder(hop, last.as_deref(), &cs.plan.responders) {
                Some(r) => r,
                None => break,
            },
        };
        hop += 1;
        match run_component(cs, &responder, link, task, clock, rng) {
            Ok((record, last_resp, stop)) => {
                if last_resp.is_some() {
                    last = last_resp;
                }
                components.push(record);
                if let Some(e) = stop {
                    halted = Some(e);
                    break;
                }
            }
            Err(e) => {
                let fatal = matches!(
                    e,
                    CSessionError::GlobalExpired | CSessionError::GlobalQuotaExhausted | CSessionError::ChainsExhausted
                );
                components.push(ComponentRecord { responder, summary: None, error: Some(e.to_string()) });
                if fatal {
                    halted = Some(e);
                    break;
                }
            }
        }
    }
    CSessionReport { global: cs.state.clone(), components, halted }
}

type ComponentRun = (ComponentRecord, Option<Vec<u8>>, Option<CSessionError>);

fn run_component(
    cs: &mut CSession,
    responder: &Aid,
    link: &mut dyn Link,
    task: &mut dyn TaskHook,
    clock: &dyn Clock,
    rng: &mut dyn RngCore,
) -> Result<ComponentRun, CSessionError> {
    if clock.now() > cs.state.t_exp_global {
        return Err(CSessionError::GlobalExpired);
    }
    let Some(first) = task.next_request(responder, 0, None) else {
        return Ok((ComponentRecord { responder: responder.clone(), summary: None, error: None }, None, None));
    };
    // producing the payload may have taken time
    let now = clock.now();
    let (chains, sid_nonce) = match &mut cs.source {
        ChainSource::Static(sc) => {
            let slot = sc.slot_for(responder).ok_or_else(|| CSessionError::NoChainLeft(responder.clone()))?;
            slot.used = true;
            (slot.chains.clone(), slot.sid_nonce)
        }
        ChainSource::Dynamic(dc) => {
            if dc.used() >= dc.capacity() {
                return Err(CSessionError::ChainsExhausted);
            }
            let nonce = fresh_sid_nonces(1, rng)[0];
            let keys = link.initiator();
            let sid = derive_sid(&cs.plan.task_digest, &keys.aid, responder, &nonce);
            (vec![authorize_chain_dynamic(dc, keys, responder, &sid)?], nonce)
        }
    };
    let auth = link
        .discover(responder)
        .map_err(|e| CSessionError::InvalidParameter(format!("discovery failed: {e}")))?;
    let (m0, mut st) = open_component_session(
        &mut cs.state,
        link.initiator(),
        chains,
        cs.plan.task_digest,
        sid_nonce,
        auth,
        cs.plan.session_delta,
        first,
        now,
        rng,
    )?;
    let mut error = None;
    let mut stop = None;
    let mut last = None;
    let reply = link.exchange(responder, Frame::Init(Box::new(m0)).to_bytes());
    match receive(&mut st, reply, clock.now()) {
        Ok(Some(payload)) => last = Some(payload),
        Ok(None) => {}
        Err(e) => error = Some(e.to_string()),
    }
    let mut round = 1;
    while error.is_none() && st.status == crate::asession::Status::Open && st.ctr_icp > 0 && st.ctr_rcp > 0 {
        let Some(payload) = task.next_request(responder, round, last.as_deref()) else { break };
        let now = clock.now();
        if now > st.t_exp {
            break;
        }
        if let Err(e) = cs.state.take(now) {
            stop = Some(e);
            break;
        }
        let req = match st.send_request(payload, now) {
            Ok(r) => r,
            Err(e) => {
                cs.state.ctr_global -= 1;
                error = Some(e.to_string());
                break;
            }
        };
        let reply = link.exchange(responder, Frame::Request(req).to_bytes());
        match receive(&mut st, reply, clock.now()) {
            Ok(Some(payload)) => last = Some(payload),
            Ok(None) => break,
            Err(e) => error = Some(e.to_string()),
        }
        round += 1;
    }
    if st.status == crate::asession::Status::Aborted {
        link.notify(responder, Frame::Terminal(st.abort_notice()).to_bytes());
    }
    let (summary, notice) = st.close();
    if let Some(t) = notice {
        link.notify(responder, Frame::Terminal(t).to_bytes());
    }
    Ok((ComponentRecord { responder: responder.clone(), summary: Some(summary), error }, last, stop))
}

/// Feeds the responder's reply into the initiator state. `Ok(None)` means
/// no payload arrived (silence or a terminal notice).
fn receive(st: &mut SessionState, reply: Option<Vec<u8>>, now: Tick) -> Result<Option<Vec<u8>>, SessionError> {
    let Some(bytes) = reply else { return Ok(None) };
    let frame = match Frame::from_bytes(&bytes) {
        Ok(f) => f,
        Err(_) => return Err(st.abort(Fault::Malformed, Role::Responder)),
    };
    match frame {
        Frame::Resp(m1) => st.handle_handshake_resp(&m1, now).map(Some),
        Frame::Response(m) => st.handle_response(&m, now).map(Some),
        Frame::Terminal(t) => st.handle_terminal(&t).map(|_| None),
        _ => Err(st.abort(Fault::Unexpected, Role::Responder)),
    }
}
