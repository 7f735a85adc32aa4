//! A CA, a Provider, users and registered agents wired together in memory.
//! Shared by the simulator, the examples and the tests.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::asession::{
    initiate, respond, AgentKeys, Fault, Frame, ReplayGuard, Reply, ResponderCtx, Role, SessionError, SessionState,
    Terminal, TerminalReason,
};
use crate::csession::{Clock, Link};
use crate::encoding::split_fields;
use crate::crypto::{hash, ChainSeedKey, CryptoError, Digest, SchemeId, SignatureKeyPair};
use crate::pki::CertificateAuthority;
use crate::policy::{Aid, AidPattern, ContactPolicy, ContactRule, Direction, PolicyError, ResponderPolicy, Tick};
use crate::provider::wire::{parse_response, Request, Response};
use crate::provider::{AuthorizationToken, Endpoint, Provider, ProviderError, User};

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown agent {0}")]
    UnknownAgent(Aid),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// The stand-in task executor: answers every request with a short digest
/// of it.
pub fn stub_execute(request: &[u8]) -> Vec<u8> {
    format!("done:{}", &hash(request).to_hex()[..16]).into_bytes()
}

/// What happened to one inbound frame at a host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Accepted,
    /// Answered with a session-ending notice instead of executing.
    Refused(TerminalReason),
    Rejected(SessionError),
    /// Not attributable to a session (undecodable, unknown sid, wrong state).
    Dropped(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostEvent {
    pub tick: Tick,
    pub from: Aid,
    pub sid: Option<Digest>,
    pub kind: &'static str,
    pub outcome: Outcome,
}

/// Runtime state of one agent: its responder policies, verifier memory and
/// live sessions in either role.
#[derive(Debug, Default, Clone)]
pub struct Host {
    pub rcps: Vec<ResponderPolicy>,
    pub guard: ReplayGuard,
    pub sessions: BTreeMap<Digest, SessionState>,
    /// Payloads accepted as initiator, per session.
    pub received: Vec<(Digest, Vec<u8>)>,
    pub events: Vec<HostEvent>,
}

impl Host {
    /// Most specific responder policy covering `initiator`.
    pub fn rcp_for(&self, initiator: &Aid) -> Option<&ResponderPolicy> {
        best_rcp(&self.rcps, initiator)
    }
}

fn best_rcp<'a>(rcps: &'a [ResponderPolicy], initiator: &Aid) -> Option<&'a ResponderPolicy> {
    rcps.iter().filter(|r| r.initiator.matches(initiator)).fold(None, |best: Option<&ResponderPolicy>, r| match best {
        Some(b) if b.initiator.specificity() >= r.initiator.specificity() => Some(b),
        _ => Some(r),
    })
}

/// Provider exchanges, grouped for bandwidth accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    UserRegistration,
    AgentRegistration,
    Discovery,
}

/// Tree heights for the long-lived keys. Everything is Merkle-Lamport.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyHeights {
    pub ca: u8,
    pub provider: u8,
    pub user: u8,
    pub agent: u8,
}

impl Default for KeyHeights {
    fn default() -> Self {
        KeyHeights { ca: 6, provider: 8, user: 6, agent: 5 }
    }
}

pub struct Testbed {
    pub rng: ChaCha20Rng,
    pub ca: CertificateAuthority,
    pub provider: Provider,
    pub users: BTreeMap<String, User>,
    pub agents: BTreeMap<Aid, AgentKeys>,
    pub hosts: BTreeMap<Aid, Host>,
    /// Octets exchanged with the Provider (request plus reply), per call.
    pub wire: Vec<(Phase, usize)>,
    heights: KeyHeights,
    next_port: u16,
}

impl std::fmt::Debug for Testbed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Testbed").field("users", &self.users.keys()).field("agents", &self.agents.keys()).finish()
    }
}

/// Parses `(direction, pattern, budget)` triples into a policy.
pub fn contact_policy(rules: &[(&str, &str, u32)]) -> Result<ContactPolicy, PolicyError> {
    let rules = rules
        .iter()
        .map(|(d, p, b)| ContactRule::new(d.parse::<Direction>()?, p, *b))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ContactPolicy::new(rules))
}

impl Testbed {
    pub fn new(seed: u64, heights: KeyHeights) -> Result<Self, SetupError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ca = CertificateAuthority::new(SchemeId::merkle_lamport(heights.ca), &mut rng)?;
        let ta = SignatureKeyPair::generate(SchemeId::merkle_lamport(heights.provider), &mut rng)?;
        let provider = Provider::new(ca.public_key().clone(), ta, b"provider-tls-pk".to_vec(), seed);
        Ok(Testbed { rng, ca, provider, users: BTreeMap::new(), agents: BTreeMap::new(), hosts: BTreeMap::new(), wire: Vec::new(), heights, next_port: 1 })
    }

    pub fn add_user(&mut self, uid: &str) -> Result<(), SetupError> {
        let user = User::new(uid, "pw", SchemeId::merkle_lamport(self.heights.user), &mut self.ca, &mut self.rng)?;
        let req = Request::RegisterUser { uid: uid.into(), pwd: "pw".into(), id_cert: user.cert.clone() };
        self.call_provider(Phase::UserRegistration, uid, &req)?;
        self.users.insert(uid.to_string(), user);
        Ok(())
    }

    /// Registers an agent owned by the user named in its aid, creating the
    /// user on first use.
    pub fn add_agent(&mut self, aid: &str, cp: ContactPolicy) -> Result<Aid, SetupError> {
        let aid = Aid::parse(aid)?;
        let uid = aid.uid().to_string();
        if !self.users.contains_key(&uid) {
            self.add_user(&uid)?;
        }
        let tls = self.ca.issue(aid.as_str(), format!("tls:{aid}").as_bytes())?;
        let identity = SignatureKeyPair::generate(SchemeId::merkle_lamport(self.heights.agent), &mut self.rng)?;
        let chain_key = ChainSeedKey::generate(&mut self.rng);
        let endpoint = Endpoint { device: format!("dev-{}", self.next_port), ip: "10.0.0.1".into(), port: self.next_port };
        self.next_port += 1;
        let user = self.users.get_mut(&uid).ok_or_else(|| SetupError::UnknownUser(uid.clone()))?;
        let reg = user.agent_registration(&aid, endpoint, cp, tls, identity.public_key().clone(), self.provider.keys())?;
        self.call_provider(Phase::AgentRegistration, &uid, &Request::RegisterAgent(Box::new(reg)))?;
        let info = self.provider.agent_info(&aid).expect("just registered");
        self.agents.insert(aid.clone(), AgentKeys::new(identity, chain_key, info));
        self.hosts.insert(aid.clone(), Host::default());
        Ok(aid)
    }

    /// Adds a per-session budget the responder grants to matching initiators.
    pub fn set_rcp(&mut self, responder: &Aid, initiator: &str, q: u64, delta: Tick) -> Result<(), SetupError> {
        let rcp = ResponderPolicy::new(responder.clone(), AidPattern::parse(initiator)?, q, delta)?;
        self.hosts.get_mut(responder).ok_or_else(|| SetupError::UnknownAgent(responder.clone()))?.rcps.push(rcp);
        Ok(())
    }

    pub fn grant(&mut self, initiator: &Aid, responder: &Aid) -> Result<AuthorizationToken, ProviderError> {
        let req = Request::Discover { initiator: initiator.clone(), responder: responder.clone() };
        match self.call_provider(Phase::Discovery, initiator.as_str(), &req)? {
            Response::Authorized(tok) => Ok(*tok),
            _ => Err(ProviderError::Malformed),
        }
    }

    fn call_provider(&mut self, phase: Phase, from: &str, req: &Request) -> Result<Response, ProviderError> {
        let frame = req.to_frame();
        let reply = self.provider.handle_frame(from, &frame);
        self.wire.push((phase, frame.len() + reply.len()));
        parse_response(&reply).map_err(|_| ProviderError::Malformed)?
    }

    /// An agent's keys together with its owner, borrowed at once.
    pub fn agent_and_user(&mut self, aid: &Aid) -> Option<(&mut AgentKeys, &mut User)> {
        let keys = self.agents.get_mut(aid)?;
        let user = self.users.get_mut(aid.uid())?;
        Some((keys, user))
    }
}

impl Testbed {
    /// Discovers `responder`, starts a session and returns the encoded `m0`.
    #[allow(clippy::too_many_arguments)]
    pub fn open_session(
        &mut self,
        initiator: &Aid,
        responder: &Aid,
        task: &[u8],
        q: u64,
        delta: Tick,
        request: Vec<u8>,
        now: Tick,
    ) -> Result<(Digest, Vec<u8>), SetupError> {
        let auth = self.grant(initiator, responder)?;
        let keys = self.agents.get_mut(initiator).ok_or_else(|| SetupError::UnknownAgent(initiator.clone()))?;
        let user = self.users.get_mut(initiator.uid()).ok_or_else(|| SetupError::UnknownUser(initiator.uid().into()))?;
        let (m0, st) = initiate(keys, auth, hash(task), q, delta, user, request, now, &mut self.rng)?;
        let sid = st.sid;
        self.hosts.get_mut(initiator).expect("host exists with agent").sessions.insert(sid, st);
        Ok((sid, Frame::Init(Box::new(m0)).to_bytes()))
    }

    /// Next request of an initiator session, encoded.
    pub fn next_request(&mut self, initiator: &Aid, sid: &Digest, payload: Vec<u8>, now: Tick) -> Result<Vec<u8>, SetupError> {
        let st = self
            .hosts
            .get_mut(initiator)
            .and_then(|h| h.sessions.get_mut(sid))
            .ok_or(SetupError::Session(SessionError::InvalidState("unknown session")))?;
        Ok(Frame::Request(st.send_request(payload, now)?).to_bytes())
    }

    /// Closes a session locally; returns the notice for the peer if one is due.
    pub fn close_session(&mut self, aid: &Aid, sid: &Digest) -> Option<(Aid, Vec<u8>)> {
        let st = self.hosts.get_mut(aid)?.sessions.get_mut(sid)?;
        let (_, notice) = st.close();
        notice.map(|t| (st.peer_aid.clone(), Frame::Terminal(t).to_bytes()))
    }

    /// Feeds one inbound frame to `to`'s runtime and returns its reply, if
    /// any. `from` is the authenticated channel identity of the sender.
    pub fn serve(&mut self, to: &Aid, from: &Aid, bytes: &[u8], now: Tick) -> Option<Vec<u8>> {
        let host = self.hosts.get_mut(to)?;
        let keys = self.agents.get(to)?;
        let mut log = |sid, kind, outcome| {
            host_event(&mut host.events, now, from, sid, kind, outcome);
        };
        let frame = match Frame::from_bytes(bytes) {
            Ok(f) => f,
            Err(_) => return serve_malformed(host, from, bytes, now),
        };
        let kind = frame.kind();
        let sid = frame.sid();
        match frame {
            Frame::Init(m0) => {
                if m0.info.aid != *from {
                    let err = SessionError::Rejected { fault: Fault::WrongPeer, accountable: Role::Initiator };
                    log(Some(sid), kind, Outcome::Rejected(err));
                    return None;
                }
                let user = self.users.get_mut(to.uid())?;
                let rcp = best_rcp(&host.rcps, from);
                let mut exec = stub_execute;
                let ctx = ResponderCtx {
                    keys,
                    ca: self.ca.public_key(),
                    provider: self.provider.keys(),
                    rcp,
                    user,
                    guard: &mut host.guard,
                    executor: &mut exec,
                    now,
                    rng: &mut self.rng,
                };
                match respond(ctx, &m0) {
                    Ok((m1, st)) => {
                        host.sessions.insert(sid, st);
                        host_event(&mut host.events, now, from, Some(sid), kind, Outcome::Accepted);
                        Some(Frame::Resp(Box::new(m1)).to_bytes())
                    }
                    Err(e) => {
                        host_event(&mut host.events, now, from, Some(sid), kind, Outcome::Rejected(e.clone()));
                        // A second handshake for a live session can only come from the
                        // initiator itself; end that session with a notice it can verify.
                        let live = host.sessions.get_mut(&sid).filter(|st| st.peer_aid == *from && !st.status.is_terminal());
                        let notice = match (live, e) {
                            (Some(st), SessionError::Rejected { fault, accountable }) => {
                                st.abort(fault, accountable);
                                st.abort_notice()
                            }
                            _ => Terminal { sid, reason: TerminalReason::Aborted, tag: None },
                        };
                        Some(Frame::Terminal(notice).to_bytes())
                    }
                }
            }
            other => {
                let Some(st) = host.sessions.get_mut(&sid).filter(|st| st.peer_aid == *from) else {
                    let err = SessionError::Rejected { fault: Fault::UnknownSession, accountable: sender_role(host, from, bytes[0]) };
                    host_event(&mut host.events, now, from, Some(sid), kind, Outcome::Rejected(err));
                    return None;
                };
                let mut out = None;
                let outcome = match other {
                    Frame::Resp(m1) => st.handle_handshake_resp(&m1, now).map(|p| host.received.push((sid, p))).map(|_| Outcome::Accepted),
                    Frame::Response(m) => st.handle_response(&m, now).map(|p| host.received.push((sid, p))).map(|_| Outcome::Accepted),
                    Frame::Request(m) => {
                        let mut exec = stub_execute;
                        st.handle_request(&m, &mut exec, &mut host.guard, now).map(|reply| {
                            let o = match &reply {
                                Reply::Response(_) => Outcome::Accepted,
                                Reply::Terminal(t) => Outcome::Refused(t.reason),
                            };
                            out = Some(reply.into_frame().to_bytes());
                            o
                        })
                    }
                    Frame::Terminal(t) => st.handle_terminal(&t).map(|_| Outcome::Accepted),
                    Frame::Init(_) => unreachable!("handled above"),
                };
                let outcome = outcome.unwrap_or_else(|e| {
                    if e.accountable().is_some() {
                        out = Some(Frame::Terminal(st.abort_notice()).to_bytes());
                    }
                    Outcome::Rejected(e)
                });
                host_event(&mut host.events, now, from, Some(sid), kind, outcome);
                out
            }
        }
    }
}

/// Direct in-memory transport for an orchestrator living in the testbed.
/// `tamper` may rewrite replies on their way back, standing in for a
/// misbehaving responder.
/// Rewrites a reply from the given responder in place.
pub type Tamper<'a> = Box<dyn FnMut(&Aid, &mut Vec<u8>) + 'a>;

pub struct LocalLink<'a> {
    pub tb: &'a mut Testbed,
    pub from: Aid,
    pub clock: &'a dyn Clock,
    pub tamper: Option<Tamper<'a>>,
}

impl<'a> LocalLink<'a> {
    pub fn new(tb: &'a mut Testbed, from: Aid, clock: &'a dyn Clock) -> Self {
        LocalLink { tb, from, clock, tamper: None }
    }
}

impl Link for LocalLink<'_> {
    fn initiator(&mut self) -> &mut AgentKeys {
        self.tb.agents.get_mut(&self.from).expect("orchestrator is registered")
    }

    fn discover(&mut self, responder: &Aid) -> Result<AuthorizationToken, ProviderError> {
        self.tb.grant(&self.from, responder)
    }

    fn exchange(&mut self, to: &Aid, frame: Vec<u8>) -> Option<Vec<u8>> {
        let mut reply = self.tb.serve(to, &self.from, &frame, self.clock.now())?;
        if let Some(t) = self.tamper.as_mut() {
            t(to, &mut reply);
        }
        Some(reply)
    }

    fn notify(&mut self, to: &Aid, frame: Vec<u8>) {
        self.tb.serve(to, &self.from, &frame, self.clock.now());
    }
}

/// Role the authenticated sender plays towards this host, judged from the
/// frame type or, for notices, from the sessions the two share.
fn sender_role(host: &Host, from: &Aid, tag: u8) -> Role {
    match crate::asession::kind_name(tag) {
        "handshake-init" | "request" => Role::Initiator,
        "handshake-resp" | "response" => Role::Responder,
        _ => host.sessions.values().find(|st| st.peer_aid == *from).map_or(Role::Initiator, |st| st.role.other()),
    }
}

/// An undecodable frame still arrives over a channel that names its
/// sender. If the sid can be read and matches a live session with that
/// sender, the session is aborted; either way the sender is blamed.
fn serve_malformed(host: &mut Host, from: &Aid, bytes: &[u8], now: Tick) -> Option<Vec<u8>> {
    let tag = bytes.first().copied().unwrap_or(0);
    let kind = crate::asession::kind_name(tag);
    let sid = bytes
        .get(1..)
        .and_then(|body| split_fields(body).ok())
        .and_then(|f| f.first().and_then(|s| <[u8; 32]>::try_from(*s).ok()))
        .map(Digest);
    let live = sid.filter(|_| kind != "handshake-init").and_then(|sid| {
        host.sessions.get_mut(&sid).filter(|st| st.peer_aid == *from && !st.status.is_terminal())
    });
    match live {
        Some(st) => {
            let err = st.abort(Fault::Malformed, st.role.other());
            let notice = Frame::Terminal(st.abort_notice()).to_bytes();
            let sid = st.sid;
            host_event(&mut host.events, now, from, Some(sid), kind, Outcome::Rejected(err));
            Some(notice)
        }
        None => {
            let err = SessionError::Rejected { fault: Fault::Malformed, accountable: sender_role(host, from, tag) };
            host_event(&mut host.events, now, from, None, kind, Outcome::Rejected(err));
            None
        }
    }
}

fn host_event(events: &mut Vec<HostEvent>, tick: Tick, from: &Aid, sid: Option<Digest>, kind: &'static str, outcome: Outcome) {
    events.push(HostEvent { tick, from: from.clone(), sid, kind, outcome });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agents_get_verifiable_info() {
        let mut tb = Testbed::new(1, KeyHeights { ca: 3, provider: 3, user: 3, agent: 1 }).unwrap();
        let a = tb.add_agent("alice@x.com:mail", contact_policy(&[("receive", "*", 2)]).unwrap()).unwrap();
        let b = tb.add_agent("bob@y.com:cal", contact_policy(&[("send", "*", 5)]).unwrap()).unwrap();
        let info = &tb.agents[&a].info;
        assert!(info.verify(tb.ca.public_key(), tb.provider.keys()).is_ok());
        assert_eq!(tb.users.len(), 2);
        tb.grant(&b, &a).unwrap();
        tb.grant(&b, &a).unwrap();
        assert!(tb.grant(&b, &a).is_err());
        let phases: Vec<Phase> = tb.wire.iter().map(|(p, _)| *p).collect();
        assert_eq!(phases.iter().filter(|p| **p == Phase::Discovery).count(), 3);
        assert_eq!(phases.iter().filter(|p| **p == Phase::AgentRegistration).count(), 2);
    }
}
