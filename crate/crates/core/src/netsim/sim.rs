//! Runs scenarios against a testbed over the simulated network.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::scenario::{AdversaryAction, CMode, CSessionSpec, Expectation, Rule, Step};
use super::{parse_scenario, Network, Observation, Packet, ScenarioParseError, SimClock};
use crate::asession::{audit_transcript, AgentKeys, Frame, SessionError, SessionSummary};
use crate::csession::{
    commit_static, delegate_dynamic, drive_csession, fresh_sid_nonces, plan_dynamic, plan_static, CSession,
    CSessionReport, ChainSource, Link, StubTask,
};
use crate::crypto::{hash, Digest};
use crate::encoding::{Encode, Encoder};
use crate::policy::{Aid, InitiatorPolicy, PolicyFile, Tick};
use crate::provider::{AuthorizationToken, ProviderError};
use crate::testbed::{contact_policy, HostEvent, Outcome, Phase, SetupError, Testbed};

/// Upper bound on deliveries per `run`, against reply loops.
const MAX_DELIVERIES: usize = 100_000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Parse(#[from] ScenarioParseError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Setup(#[from] SetupError),
}

/// Something an honest endpoint declined to do when asked by the script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalEvent {
    pub tick: Tick,
    pub line: usize,
    pub subject: String,
    pub label: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryRecord {
    pub tick: Tick,
    pub line: usize,
    pub action: String,
    /// Id of a packet the action created, or why the channel refused it.
    pub result: Result<Option<u64>, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    pub name: String,
    pub initiator: Aid,
    pub responder: Aid,
    pub sid: Option<Digest>,
    pub initiator_view: Option<SessionSummary>,
    pub responder_view: Option<SessionSummary>,
    /// Octets of the Provider exchange that authorized this session.
    pub discovery_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectResult {
    pub line: usize,
    pub text: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub seed: u64,
    pub final_tick: Tick,
    pub packets: Vec<Packet>,
    pub observations: Vec<Observation>,
    pub adversary: Vec<AdversaryRecord>,
    pub events: Vec<(Aid, HostEvent)>,
    pub local: Vec<LocalEvent>,
    pub sessions: Vec<SessionRecord>,
    pub csessions: Vec<(String, CSessionReport)>,
    pub expectations: Vec<ExpectResult>,
    pub provider_digest: Digest,
    /// Octets of every Provider call, in call order.
    pub provider_traffic: Vec<(Phase, usize)>,
}

/// First identifier of a `Debug` rendering, i.e. the variant name.
fn variant(debug: String) -> String {
    debug.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string()
}

fn session_label(e: &SessionError) -> String {
    match e {
        SessionError::Rejected { fault, .. } => fault.to_string(),
        other => variant(format!("{other:?}")),
    }
}

fn setup_label(e: &SetupError) -> String {
    match e {
        SetupError::Session(e) => session_label(e),
        SetupError::Provider(e) => variant(format!("{e:?}")),
        SetupError::Crypto(e) => variant(format!("{e:?}")),
        SetupError::Policy(e) => variant(format!("{e:?}")),
        other => variant(format!("{other:?}")),
    }
}

fn outcome_text(o: &Outcome) -> String {
    match o {
        Outcome::Accepted => "accepted".into(),
        Outcome::Refused(r) => format!("refused:{r:?}"),
        Outcome::Rejected(e) => format!("rejected:{e}"),
        Outcome::Dropped(why) => format!("dropped:{why}"),
    }
}

/// Network plus endpoints: everything a delivery touches.
pub struct World {
    pub tb: Testbed,
    pub net: Network,
    rules: Vec<Rule>,
    sent_kinds: BTreeMap<(Aid, &'static str), usize>,
    pub adversary: Vec<AdversaryRecord>,
    line: usize,
}

impl World {
    /// Puts a frame on the wire and fires any standing rule it triggers.
    pub fn send(&mut self, from: &Aid, to: &Aid, bytes: Vec<u8>, now: Tick) -> Result<u64, super::NetError> {
        let id = self.net.send(from, to, bytes, now)?;
        let kind = self.net.packets[id as usize].kind();
        let n = self.sent_kinds.entry((from.clone(), kind)).or_insert(0);
        *n += 1;
        let n = *n;
        let fired: Vec<AdversaryAction> = self
            .rules
            .iter()
            .filter(|r| &r.sender == from && r.kind == kind && r.nth == n)
            .map(|r| r.action.on(id))
            .collect();
        for a in fired {
            self.adversary_act(&a, now);
        }
        Ok(id)
    }

    fn adversary_act(&mut self, action: &AdversaryAction, now: Tick) {
        let result = self.net.apply(action, now).map_err(|e| e.to_string());
        self.adversary.push(AdversaryRecord { tick: now, line: self.line, action: format!("{action:?}"), result });
    }

    /// Delivers packet `id` and sends whatever the receiver answers.
    pub fn deliver(&mut self, id: u64, now: Tick) {
        let Ok(p) = self.net.take(id, now) else { return };
        if let Some(reply) = self.tb.serve(&p.to, &p.from, &p.bytes, now) {
            // Both ends are registered, so the reply channel exists.
            let _ = self.send(&p.to, &p.from, reply, now);
        }
    }

    /// Delivers everything due; returns how many packets moved.
    pub fn run(&mut self, now: Tick) -> usize {
        let mut n = 0;
        while n < MAX_DELIVERIES {
            let Some(id) = self.net.next_due(now) else { break };
            self.deliver(id, now);
            n += 1;
        }
        n
    }
}

/// The orchestrator's side of the network during a C-session. Replies to it
/// are taken off the queue instead of being handed to its host runtime.
struct NetLink<'a> {
    world: &'a mut World,
    clock: &'a SimClock,
    orch: Aid,
}

impl Link for NetLink<'_> {
    fn initiator(&mut self) -> &mut AgentKeys {
        self.world.tb.agents.get_mut(&self.orch).expect("orchestrator checked before driving")
    }

    fn discover(&mut self, responder: &Aid) -> Result<AuthorizationToken, ProviderError> {
        self.world.tb.grant(&self.orch, responder)
    }

    fn exchange(&mut self, to: &Aid, frame: Vec<u8>) -> Option<Vec<u8>> {
        let now = self.clock.read();
        self.world.send(&self.orch, to, frame, now).ok()?;
        for _ in 0..MAX_DELIVERIES {
            let id = self.world.net.next_due(now)?;
            if self.world.net.packets[id as usize].to != self.orch {
                self.world.deliver(id, now);
                continue;
            }
            let p = self.world.net.take(id, now).ok()?;
            if &p.from == to {
                return Some(p.bytes);
            }
            self.world.tb.serve(&p.to, &p.from, &p.bytes, now);
        }
        None
    }

    fn notify(&mut self, to: &Aid, frame: Vec<u8>) {
        let now = self.clock.read();
        if self.world.send(&self.orch, to, frame, now).is_ok() {
            self.world.run(now);
        }
    }
}

struct Named {
    name: String,
    initiator: Aid,
    responder: Aid,
    sid: Option<Digest>,
    discovery_bytes: usize,
}

pub struct Simulation {
    pub world: World,
    pub clock: SimClock,
    rng: ChaCha20Rng,
    seed: u64,
    base_dir: PathBuf,
    sessions: Vec<Named>,
    csessions: Vec<(String, CSessionReport)>,
    icps: BTreeMap<Aid, InitiatorPolicy>,
    local: Vec<LocalEvent>,
    expectations: Vec<ExpectResult>,
}

impl Simulation {
    pub fn new(seed: u64, heights: crate::testbed::KeyHeights, base_dir: &Path) -> Result<Self, RunError> {
        let tb = Testbed::new(seed, heights)?;
        Ok(Simulation {
            world: World { tb, net: Network::new(), rules: Vec::new(), sent_kinds: BTreeMap::new(), adversary: Vec::new(), line: 0 },
            clock: SimClock::new(),
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0x5eed),
            seed,
            base_dir: base_dir.to_path_buf(),
            sessions: Vec::new(),
            csessions: Vec::new(),
            icps: BTreeMap::new(),
            local: Vec::new(),
            expectations: Vec::new(),
        })
    }

    fn now(&self) -> Tick {
        self.clock.read()
    }

    fn local(&mut self, subject: &str, label: String, detail: String) {
        let ev = LocalEvent { tick: self.now(), line: self.world.line, subject: subject.to_string(), label, detail };
        self.local.push(ev);
    }

    fn register(&mut self, aid: &str, cp: crate::policy::ContactPolicy) -> Option<Aid> {
        match self.world.tb.add_agent(aid, cp) {
            Ok(a) => {
                let pk = self.world.tb.agents[&a].identity_pk().to_canonical();
                self.world.net.directory.register(a.as_str(), pk);
                Some(a)
            }
            Err(e) => {
                self.local(aid, setup_label(&e), e.to_string());
                None
            }
        }
    }

    fn named(&self, name: &str) -> Option<&Named> {
        self.sessions.iter().find(|s| s.name == name)
    }

    /// Executes one scenario step.
    pub fn step(&mut self, line: usize, step: &Step) -> Result<(), RunError> {
        self.world.line = line;
        let now = self.now();
        match step {
            Step::Agent { aid, rules } => {
                let triples: Vec<(&str, &str, u32)> = rules.iter().map(|(d, p, b)| (d.as_str(), p.as_str(), *b)).collect();
                match contact_policy(&triples) {
                    Ok(cp) => {
                        self.register(aid, cp);
                    }
                    Err(e) => return Err(ScenarioParseError { line, msg: e.to_string() }.into()),
                }
            }
            Step::Policy { aid, path } => {
                let full = self.base_dir.join(path);
                let text = std::fs::read_to_string(&full).map_err(|source| RunError::Io { path: full.clone(), source })?;
                let pf = PolicyFile::parse(&text).map_err(|e| ScenarioParseError { line, msg: format!("{}: {e}", full.display()) })?;
                if let Some(a) = self.register(aid, pf.contact.clone()) {
                    let host = self.world.tb.hosts.get_mut(&a).expect("registered");
                    host.rcps.extend(pf.rcp.iter().filter(|r| r.responder == a).cloned());
                    if let Some(icp) = pf.icp_for(&a) {
                        self.icps.insert(a, icp.clone());
                    }
                }
            }
            Step::Rcp { responder, pattern, q, delta } => {
                let set = Aid::parse(responder).map_err(SetupError::from).and_then(|r| self.world.tb.set_rcp(&r, pattern, *q, *delta));
                if let Err(e) = set {
                    self.local(responder, setup_label(&e), e.to_string());
                }
            }
            Step::Corrupt(aid) => {
                self.world.net.corrupted.insert(aid.clone());
            }
            Step::Session { name, initiator, responder, q, delta, task, payload } => {
                let calls = self.world.tb.wire.len();
                let opened = self.world.tb.open_session(initiator, responder, task.as_bytes(), *q, *delta, payload.clone(), now);
                let sid = match opened {
                    Ok((sid, m0)) => match self.world.send(initiator, responder, m0, now) {
                        Ok(_) => Some(sid),
                        Err(e) => {
                            self.local(name, variant(format!("{e:?}")), e.to_string());
                            Some(sid)
                        }
                    },
                    Err(e) => {
                        self.local(name, setup_label(&e), e.to_string());
                        None
                    }
                };
                let discovery_bytes = self.world.tb.wire[calls..].iter().map(|(_, n)| n).sum();
                self.sessions.push(Named { name: name.clone(), initiator: initiator.clone(), responder: responder.clone(), sid, discovery_bytes });
            }
            Step::Request { name, payload } => {
                let Some((i, r, sid)) = self.named(name).and_then(|s| Some((s.initiator.clone(), s.responder.clone(), s.sid?))) else {
                    self.local(name, "UnknownSession".into(), "no open session by that name".into());
                    return Ok(());
                };
                match self.world.tb.next_request(&i, &sid, payload.clone(), now) {
                    Ok(frame) => {
                        if let Err(e) = self.world.send(&i, &r, frame, now) {
                            self.local(name, variant(format!("{e:?}")), e.to_string());
                        }
                    }
                    Err(e) => self.local(name, setup_label(&e), e.to_string()),
                }
            }
            Step::Close(name) => {
                let Some((i, sid)) = self.named(name).and_then(|s| Some((s.initiator.clone(), s.sid?))) else {
                    self.local(name, "UnknownSession".into(), "no open session by that name".into());
                    return Ok(());
                };
                if let Some((peer, notice)) = self.world.tb.close_session(&i, &sid) {
                    let _ = self.world.send(&i, &peer, notice, now);
                }
            }
            Step::Run => {
                self.world.run(now);
            }
            Step::Deliver => {
                if let Some(id) = self.world.net.next_due(now) {
                    self.world.deliver(id, now);
                }
            }
            Step::Advance(k) => {
                self.clock.advance(*k).map_err(|e| ScenarioParseError { line, msg: e.to_string() })?;
            }
            Step::Adversary(a) => self.world.adversary_act(a, now),
            Step::Rule(r) => self.world.rules.push(r.clone()),
            Step::CSession(spec) => self.csession(spec),
            Step::Expect(_) => unreachable!("checked by run"),
        }
        Ok(())
    }

    fn csession(&mut self, spec: &CSessionSpec) {
        let orch = spec.orchestrator.clone();
        let icp = match spec.shape {
            Some((m, n, d)) => InitiatorPolicy::new(orch.clone(), m.saturating_mul(n), d, m, n).map_err(|e| e.to_string()),
            None => self.icps.get(&orch).cloned().ok_or_else(|| format!("no icp for {orch}")),
        };
        let icp = match icp {
            Ok(p) if self.world.tb.agents.contains_key(&orch) => p,
            Ok(_) => return self.local(&spec.name, "UnknownAgent".into(), orch.to_string()),
            Err(e) => return self.local(&spec.name, "InvalidParameter".into(), e),
        };
        let now = self.now();
        let task = hash(spec.name.as_bytes());
        let (m, n, q_tot) = (icp.chain_count, icp.chain_len, icp.q_tot);
        let tb = &mut self.world.tb;
        let user = tb.users.get_mut(orch.uid()).expect("agents have users");
        let built = match spec.mode {
            CMode::Static => plan_static(task, spec.responders.clone(), icp).and_then(|plan| {
                let nonces = fresh_sid_nonces(plan.responders.len(), &mut self.rng);
                let sc = commit_static(&plan, &tb.agents[&orch], &nonces, user)?;
                Ok(CSession::new(plan, ChainSource::Static(sc), now))
            }),
            CMode::Dynamic => plan_dynamic(task, spec.responders.clone(), icp).and_then(|plan| {
                let dc = delegate_dynamic(m, n, q_tot, user, &mut self.rng)?;
                Ok(CSession::new(plan, ChainSource::Dynamic(dc), now))
            }),
        };
        let mut cs = match built {
            Ok(cs) => cs,
            Err(e) => return self.local(&spec.name, variant(format!("{e:?}")), e.to_string()),
        };
        if let Some(cap) = spec.cap {
            cs = cs.with_global_cap(cap);
        }
        let mut task = StubTask { max_rounds: spec.rounds, max_hops: spec.hops };
        let mut link = NetLink { world: &mut self.world, clock: &self.clock, orch };
        let report = drive_csession(&mut cs, &mut link, &mut task, &self.clock, &mut self.rng);
        self.csessions.push((spec.name.clone(), report));
    }

    fn views(&self, s: &Named) -> (Option<SessionSummary>, Option<SessionSummary>) {
        let view = |aid: &Aid| {
            let sid = s.sid?;
            self.world.tb.hosts.get(aid)?.sessions.get(&sid).map(|st| st.summary())
        };
        (view(&s.initiator), view(&s.responder))
    }

    fn check(&self, e: &Expectation) -> Result<(), String> {
        let session = |name: &str| self.named(name).ok_or_else(|| format!("no session {name}"));
        let csession = |name: &str| {
            self.csessions.iter().find(|(n, _)| n == name).map(|(_, r)| r).ok_or_else(|| format!("no csession {name}"))
        };
        let verdict = |ok: bool, detail: String| if ok { Ok(()) } else { Err(detail) };
        match e {
            Expectation::Status { session: name, role, status } => {
                let (iv, rv) = self.views(session(name)?);
                let view = if *role == crate::asession::Role::Initiator { iv } else { rv };
                let got = view.map(|v| v.cause.to_string()).unwrap_or_else(|| "none".into());
                verdict(&got == status, format!("status is {got}"))
            }
            Expectation::Count { target, metric, cmp, value } => {
                let got = if metric == "tokens" {
                    csession(target)?.tokens_consumed()
                } else {
                    let (iv, rv) = self.views(session(target)?);
                    match metric.as_str() {
                        "executed" => rv.map_or(0, |v| v.requests),
                        "accepted" => iv.as_ref().map_or(0, |v| v.responses),
                        _ => iv.as_ref().map_or(0, |v| v.own_revealed),
                    }
                };
                verdict(cmp.holds(got, *value), format!("{metric} is {got}"))
            }
            Expectation::Fault { session: name, fault, role } => {
                let s = session(name)?;
                let sid = s.sid.ok_or("session never opened")?;
                let want = (*fault, *role);
                let in_state = [&s.initiator, &s.responder].iter().any(|aid| {
                    self.world.tb.hosts.get(*aid).and_then(|h| h.sessions.get(&sid)).is_some_and(|st| st.fault == Some(want))
                });
                let in_events = [&s.initiator, &s.responder].iter().any(|aid| {
                    self.world.tb.hosts.get(*aid).is_some_and(|h| {
                        h.events.iter().any(|ev| ev.sid == Some(sid) && rejected_with(&ev.outcome, want))
                    })
                });
                verdict(in_state || in_events, format!("no {fault} attributed to {role}"))
            }
            Expectation::Error { target, label } => {
                let labels: Vec<&str> = self.local.iter().filter(|l| &l.subject == target).map(|l| l.label.as_str()).collect();
                verdict(labels.contains(&label.as_str()), format!("local errors: {labels:?}"))
            }
            Expectation::Audit { session: name, verdict: want } => {
                let s = session(name)?;
                let sid = s.sid.ok_or("session never opened")?;
                let frames = self.delivered_frames(s, &sid);
                let report = audit_transcript(&frames, self.world.tb.ca.public_key(), self.world.tb.provider.keys());
                let got = report.violation.map(|(_, f, r)| (f, r));
                verdict(got == *want, format!("audit found {got:?} over {} frames", frames.len()))
            }
            Expectation::Halted { csession: name, label } => {
                let got = csession(name)?.halted.as_ref().map(|e| variant(format!("{e:?}")));
                verdict(&got == label, format!("halted: {got:?}"))
            }
            Expectation::Rejected { host, fault, role } => {
                let hit = self
                    .world
                    .tb
                    .hosts
                    .get(host)
                    .is_some_and(|h| h.events.iter().any(|ev| rejected_with(&ev.outcome, (*fault, *role))));
                verdict(hit, format!("{host} logged no such rejection"))
            }
            Expectation::Refused { cmp, value } => {
                let got = self.world.adversary.iter().filter(|a| a.result.is_err()).count() as u64;
                verdict(cmp.holds(got, *value), format!("{got} refused"))
            }
            Expectation::NoLeaks => {
                let leaks = self.leaks();
                verdict(leaks == 0, format!("{leaks} honest observations carry plaintext"))
            }
        }
    }

    /// Observations of honest-to-honest traffic that carry content.
    pub fn leaks(&self) -> usize {
        let c = &self.world.net.corrupted;
        self.world
            .net
            .observations
            .iter()
            .filter(|o| !c.contains(&o.from) && !c.contains(&o.to) && o.plaintext.is_some())
            .count()
    }

    /// Frames delivered between the two parties of a session, in delivery
    /// order, that either belong to it or could not be parsed at all.
    fn delivered_frames(&self, s: &Named, sid: &Digest) -> Vec<Vec<u8>> {
        let mut delivered: Vec<&Packet> = self
            .world
            .net
            .packets
            .iter()
            .filter(|p| matches!(p.fate, super::Fate::Delivered(_)))
            .filter(|p| (p.from == s.initiator && p.to == s.responder) || (p.from == s.responder && p.to == s.initiator))
            .collect();
        delivered.sort_by_key(|p| match p.fate {
            super::Fate::Delivered(t) => (t, p.id),
            _ => unreachable!(),
        });
        delivered
            .into_iter()
            .filter(|p| Frame::from_bytes(&p.bytes).map_or(true, |f| f.sid() == *sid))
            .map(|p| p.bytes.clone())
            .collect()
    }

    pub fn expect(&mut self, line: usize, text: &str, e: &Expectation) {
        let res = self.check(e);
        self.expectations.push(ExpectResult {
            line,
            text: text.to_string(),
            passed: res.is_ok(),
            detail: res.err().unwrap_or_default(),
        });
    }

    pub fn report(&self) -> RunReport {
        let sessions = self
            .sessions
            .iter()
            .map(|s| {
                let (iv, rv) = self.views(s);
                SessionRecord {
                    name: s.name.clone(),
                    initiator: s.initiator.clone(),
                    responder: s.responder.clone(),
                    sid: s.sid,
                    initiator_view: iv,
                    responder_view: rv,
                    discovery_bytes: s.discovery_bytes,
                }
            })
            .collect();
        let events = self
            .world
            .tb
            .hosts
            .iter()
            .flat_map(|(aid, h)| h.events.iter().map(move |ev| (aid.clone(), ev.clone())))
            .collect();
        RunReport {
            seed: self.seed,
            final_tick: self.now(),
            packets: self.world.net.packets.clone(),
            observations: self.world.net.observations.clone(),
            adversary: self.world.adversary.clone(),
            events,
            local: self.local.clone(),
            sessions,
            csessions: self.csessions.clone(),
            expectations: self.expectations.clone(),
            provider_digest: self.world.tb.provider.state_digest(),
            provider_traffic: self.world.tb.wire.clone(),
        }
    }
}

fn rejected_with(o: &Outcome, want: (crate::asession::Fault, crate::asession::Role)) -> bool {
    matches!(o, Outcome::Rejected(SessionError::Rejected { fault, accountable }) if (*fault, *accountable) == want)
}

/// Parses and runs a scenario. Policy file references resolve against
/// `base_dir`; `seed` overrides the file's own seed.
pub fn run_scenario(text: &str, base_dir: &Path, seed: Option<u64>) -> Result<RunReport, RunError> {
    let sc = parse_scenario(text)?;
    let mut sim = Simulation::new(seed.unwrap_or(sc.seed), sc.heights, base_dir)?;
    for (line, src, step) in &sc.steps {
        match step {
            Step::Expect(e) => sim.expect(*line, src, e),
            other => sim.step(*line, other)?,
        }
    }
    Ok(sim.report())
}

pub fn run_scenario_file(path: &Path, seed: Option<u64>) -> Result<RunReport, RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io { path: path.to_path_buf(), source })?;
    run_scenario(&text, path.parent().unwrap_or(Path::new(".")), seed)
}

fn framed(out: &mut Vec<u8>, rec: Vec<u8>) {
    out.extend((rec.len() as u32).to_be_bytes());
    out.extend(rec);
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.expectations.iter().all(|e| e.passed)
    }

    /// Canonical log: length-prefixed records, header first, then packets,
    /// observations, adversary actions, host events, local events, sessions,
    /// C-sessions and expectation results.
    pub fn to_log(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut head = Encoder::new();
        head.str("run").u64(self.seed).u64(self.final_tick).value(&self.provider_digest);
        framed(&mut out, head.finish());
        for (phase, n) in &self.provider_traffic {
            let mut e = Encoder::new();
            e.str(&format!("{phase:?}")).u64(*n as u64);
            framed(&mut out, e.finish());
        }
        for p in &self.packets {
            framed(&mut out, p.to_canonical());
        }
        for o in &self.observations {
            framed(&mut out, o.to_canonical());
        }
        for a in &self.adversary {
            let mut e = Encoder::new();
            e.u64(a.tick).u64(a.line as u64).str(&a.action);
            match &a.result {
                Ok(id) => e.str(&id.map(|i| format!("ok:{i}")).unwrap_or_else(|| "ok".into())),
                Err(why) => e.str(&format!("refused:{why}")),
            };
            framed(&mut out, e.finish());
        }
        for (aid, ev) in &self.events {
            let mut e = Encoder::new();
            e.value(aid).u64(ev.tick).value(&ev.from).option(ev.sid.as_ref()).str(ev.kind).str(&outcome_text(&ev.outcome));
            framed(&mut out, e.finish());
        }
        for l in &self.local {
            let mut e = Encoder::new();
            e.u64(l.tick).u64(l.line as u64).str(&l.subject).str(&l.label).str(&l.detail);
            framed(&mut out, e.finish());
        }
        for s in &self.sessions {
            let mut e = Encoder::new();
            e.str(&s.name)
                .value(&s.initiator)
                .value(&s.responder)
                .option(s.sid.as_ref())
                .option(s.initiator_view.as_ref())
                .option(s.responder_view.as_ref())
                .u64(s.discovery_bytes as u64);
            framed(&mut out, e.finish());
        }
        for (name, r) in &self.csessions {
            let mut e = Encoder::new();
            e.str(name).bytes(&r.to_log());
            framed(&mut out, e.finish());
        }
        for x in &self.expectations {
            let mut e = Encoder::new();
            e.u64(x.line as u64).str(&x.text).bool(x.passed).str(&x.detail);
            framed(&mut out, e.finish());
        }
        out
    }

    /// One row per named A-session.
    pub fn sessions_csv(&self) -> String {
        let mut s = String::from("session,initiator,responder,sid,initiator_status,responder_status,executed,accepted,revealed,fault,accountable\n");
        for r in &self.sessions {
            let iv = r.initiator_view.as_ref();
            let rv = r.responder_view.as_ref();
            let fault = iv.and_then(|v| v.fault).or_else(|| rv.and_then(|v| v.fault));
            let who = iv.and_then(|v| v.accountable).or_else(|| rv.and_then(|v| v.accountable));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.name,
                r.initiator,
                r.responder,
                r.sid.map(|d| d.to_hex()[..16].to_string()).unwrap_or_default(),
                iv.map_or("none".into(), |v| v.cause.to_string()),
                rv.map_or("none".into(), |v| v.cause.to_string()),
                rv.map_or(0, |v| v.requests),
                iv.map_or(0, |v| v.responses),
                iv.map_or(0, |v| v.own_revealed),
                fault.map(|f| f.to_string()).unwrap_or_default(),
                who.map(|r| r.to_string()).unwrap_or_default(),
            );
        }
        s
    }

    pub fn expectations_csv(&self) -> String {
        let mut s = String::from("line,expectation,result,detail\n");
        for e in &self.expectations {
            let _ = writeln!(s, "{},{},{},{}", e.line, e.text.replace(',', ";"), if e.passed { "pass" } else { "FAIL" }, e.detail.replace(',', ";"));
        }
        s
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed {}  final tick {}  provider state {}", self.seed, self.final_tick, &self.provider_digest.to_hex()[..16]);
        let _ = writeln!(s, "\npackets ({}):", self.packets.len());
        for p in &self.packets {
            let _ = writeln!(
                s,
                "  #{:<3} t={:<3} {} -> {}  {} {}B {:?}{} {:?}",
                p.id,
                p.sent_at,
                p.from,
                p.to,
                p.kind(),
                p.bytes.len(),
                p.origin,
                if p.mutated { " mutated" } else { "" },
                p.fate
            );
        }
        if !self.adversary.is_empty() {
            let _ = writeln!(s, "\nadversary:");
            for a in &self.adversary {
                let res = match &a.result {
                    Ok(Some(id)) => format!("ok, packet #{id}"),
                    Ok(None) => "ok".into(),
                    Err(e) => format!("refused: {e}"),
                };
                let _ = writeln!(s, "  line {} t={} {}: {}", a.line, a.tick, a.action, res);
            }
        }
        let _ = writeln!(s, "\nhost events:");
        for (aid, ev) in &self.events {
            let _ = writeln!(s, "  t={:<3} {} <- {} {}: {}", ev.tick, aid, ev.from, ev.kind, outcome_text(&ev.outcome));
        }
        if !self.local.is_empty() {
            let _ = writeln!(s, "\nlocal refusals:");
            for l in &self.local {
                let _ = writeln!(s, "  line {} t={} {}: {} ({})", l.line, l.tick, l.subject, l.label, l.detail);
            }
        }
        let _ = writeln!(s, "\nsessions:");
        for r in &self.sessions {
            let show = |v: &Option<SessionSummary>| match v {
                Some(v) => format!(
                    "{} req={} resp={} revealed={}{}",
                    v.cause,
                    v.requests,
                    v.responses,
                    v.own_revealed,
                    v.fault.map(|f| format!(" fault={f} by {}", v.accountable.map(|a| a.to_string()).unwrap_or_default())).unwrap_or_default()
                ),
                None => "none".into(),
            };
            let _ = writeln!(s, "  {} {} -> {}", r.name, r.initiator, r.responder);
            let _ = writeln!(s, "    initiator: {}", show(&r.initiator_view));
            let _ = writeln!(s, "    responder: {}", show(&r.responder_view));
        }
        for (name, r) in &self.csessions {
            let _ = writeln!(
                s,
                "\ncsession {name}: ctr_global={}/{} tokens={} halted={}",
                r.global.ctr_global,
                r.global.q_tot,
                r.tokens_consumed(),
                r.halted.as_ref().map(|e| e.to_string()).unwrap_or_else(|| "no".into())
            );
            for c in &r.components {
                let what = match (&c.summary, &c.error) {
                    (Some(v), _) => format!("{} revealed={} accepted={}", v.cause, v.own_revealed, v.peer_accepted),
                    (None, Some(e)) => format!("error: {e}"),
                    (None, None) => "skipped".into(),
                };
                let _ = writeln!(s, "  {}: {}", c.responder, what);
            }
        }
        if !self.expectations.is_empty() {
            let _ = writeln!(s, "\nexpectations:");
            for e in &self.expectations {
                let _ = writeln!(s, "  [{}] line {}: {}{}", if e.passed { "pass" } else { "FAIL" }, e.line, e.text, if e.passed { String::new() } else { format!("  ({})", e.detail) });
            }
        }
        s
    }
}
