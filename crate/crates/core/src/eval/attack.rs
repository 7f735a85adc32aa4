//! Scripted attacks against a live pair of agents, one row per attempt.
//!
//! Every content attack is mounted by a corrupted endpoint, which holds the
//! keys of its own channel and may therefore send anything on it. The
//! honest receiver must refuse the frame and blame the sender's role.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::asession::{derive_sid, initiate, Frame, Role, SessionError, TaskMsg, TerminalReason};
use crate::crypto::{hash, Digest, NextTok};
use crate::csession::{authorize_chain_dynamic, delegate_dynamic, fresh_sid_nonces, open_component_session, CSessionState};
use crate::netsim::{mutate_frame, run_scenario, KeyDirectory};
use crate::policy::{Aid, Tick};
use crate::provider::wire::{parse_response, Request, Response};
use crate::provider::ProviderError;
use crate::testbed::{contact_policy, Host, KeyHeights, Outcome, Testbed};

const HEIGHTS: KeyHeights = KeyHeights { ca: 4, provider: 6, user: 6, agent: 4 };
const DELTA: Tick = 100;
const RESPONDER: &str = "alice@x.com:mail";
const INITIATOR: &str = "bob@y.com:cal";
const BYSTANDER: &str = "carol@z.com:files";

/// What a row must observe to pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    /// Rejected, with the sender's role held accountable.
    Blame(Role),
    /// Answered with a session-ending notice and nothing executed.
    Refused(TerminalReason),
    /// Ended for lateness; nobody is to blame.
    Late,
    /// Refused locally before anything was sent.
    Local(String),
    Provider(ProviderError),
    /// The channel would not carry it.
    Channel,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Accepted => write!(f, "accepted"),
            Verdict::Blame(r) => write!(f, "blame {r}"),
            Verdict::Refused(r) => write!(f, "refused {r:?}"),
            Verdict::Late => write!(f, "expired"),
            Verdict::Local(e) => write!(f, "local {e}"),
            Verdict::Provider(e) => write!(f, "provider {e:?}"),
            Verdict::Channel => write!(f, "channel refused"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackRow {
    pub family: &'static str,
    pub case: String,
    pub expected: Verdict,
    pub observed: String,
    pub pass: bool,
    /// Requests the honest responder executed in the attacked session.
    pub executed: u64,
    /// Tokens the honest initiator revealed in the attacked session.
    pub revealed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackMatrix {
    pub q: u64,
    pub rows: Vec<AttackRow>,
}

impl AttackMatrix {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> Vec<&AttackRow> {
        self.rows.iter().filter(|r| !r.pass).collect()
    }

    pub fn family(&self, family: &str) -> impl Iterator<Item = &AttackRow> {
        let family = family.to_string();
        self.rows.iter().filter(move |r| r.family == family)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,case,expected,observed,executed,revealed,pass\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{},{}", r.family, r.case, r.expected, r.observed, r.executed, r.revealed, r.pass);
        }
        s
    }
}

/// One frame of the honest run, with every host as it was just before the
/// frame arrived.
#[derive(Clone)]
struct Hop {
    label: String,
    from: Aid,
    to: Aid,
    bytes: Vec<u8>,
    before: BTreeMap<Aid, Host>,
}

struct Fixture {
    tb: Testbed,
    i: Aid,
    r: Aid,
    c: Aid,
}

impl Fixture {
    fn new(seed: u64, q: u64) -> Self {
        let mut tb = Testbed::new(seed, HEIGHTS).expect("testbed");
        let r = tb.add_agent(RESPONDER, contact_policy(&[("receive", "*", 50)]).unwrap()).expect("responder");
        let i = tb.add_agent(INITIATOR, contact_policy(&[("send", "*", 50)]).unwrap()).expect("initiator");
        let c = tb.add_agent(BYSTANDER, contact_policy(&[("receive", "*", 50)]).unwrap()).expect("bystander");
        tb.set_rcp(&r, "*", q, DELTA).expect("rcp");
        tb.set_rcp(&c, "*", q, DELTA).expect("rcp");
        Fixture { tb, i, r, c }
    }

    fn role_of(&self, sender: &Aid) -> Role {
        if *sender == self.i {
            Role::Initiator
        } else {
            Role::Responder
        }
    }

    /// Runs one honest session of `q` rounds to `to`, recording every hop.
    /// Returns the hops, the sid, and the hosts after the last one.
    fn honest(&mut self, to: &Aid, q: u64, task: &[u8]) -> (Vec<Hop>, Digest, BTreeMap<Aid, Host>) {
        let (i, now) = (self.i.clone(), 0);
        let (sid, m0) = self.tb.open_session(&i, to, task, q, DELTA, b"req-01".to_vec(), now).expect("open");
        let mut hops = Vec::new();
        let m1 = self.hop(&mut hops, "m0", &i, to, m0).expect("m1");
        assert!(self.hop(&mut hops, "m1", to, &i, m1).is_none());
        for k in 2..=q {
            let req = self.tb.next_request(&i, &sid, format!("req-{k:02}").into_bytes(), now).expect("within budget");
            let resp = self.hop(&mut hops, &format!("request {k}"), &i, to, req).expect("response");
            self.hop(&mut hops, &format!("response {k}"), to, &i, resp);
        }
        assert!(self.tb.next_request(&i, &sid, b"one too many".to_vec(), now).is_err());
        let (_, notice) = self.tb.close_session(&i, &sid).expect("notice after local exhaustion");
        self.hop(&mut hops, "terminal", &i, to, notice);
        (hops, sid, self.tb.hosts.clone())
    }

    fn hop(&mut self, hops: &mut Vec<Hop>, label: &str, from: &Aid, to: &Aid, bytes: Vec<u8>) -> Option<Vec<u8>> {
        hops.push(Hop { label: label.into(), from: from.clone(), to: to.clone(), bytes: bytes.clone(), before: self.tb.hosts.clone() });
        let reply = self.tb.serve(to, from, &bytes, 0);
        let last = self.tb.hosts[to].events.last().map(|e| e.outcome.clone());
        assert_eq!(last, Some(Outcome::Accepted), "honest {label} was not accepted");
        reply
    }

    /// Delivers `bytes` against a copy of `state` and reports what the
    /// receiver logged. The fixture's hosts are left as they were.
    fn probe(&mut self, state: &BTreeMap<Aid, Host>, from: &Aid, to: &Aid, bytes: &[u8], now: Tick) -> Probe {
        let saved = std::mem::replace(&mut self.tb.hosts, state.clone());
        let before = self.tb.hosts[to].events.len();
        self.tb.serve(to, from, bytes, now);
        let outcome = self.tb.hosts[to].events.get(before).map(|e| e.outcome.clone());
        let after = std::mem::replace(&mut self.tb.hosts, saved);
        Probe { outcome, after }
    }

    fn counts(&self, hosts: &BTreeMap<Aid, Host>, sid: &Digest, responder: &Aid) -> (u64, u64) {
        let executed = hosts.get(responder).and_then(|h| h.sessions.get(sid)).map_or(0, |s| s.summary().requests);
        let revealed = hosts.get(&self.i).and_then(|h| h.sessions.get(sid)).map_or(0, |s| s.summary().own_revealed);
        (executed, revealed)
    }
}

struct Probe {
    outcome: Option<Outcome>,
    after: BTreeMap<Aid, Host>,
}

fn describe(o: &Option<Outcome>) -> String {
    match o {
        None => "silent".into(),
        Some(Outcome::Accepted) => "accepted".into(),
        Some(Outcome::Refused(r)) => format!("refused {r:?}"),
        Some(Outcome::Rejected(SessionError::Rejected { fault, accountable })) => format!("rejected {fault} blame {accountable}"),
        Some(Outcome::Rejected(e)) => format!("rejected {e}"),
        Some(Outcome::Dropped(why)) => format!("dropped {why}"),
    }
}

fn judge(want: &Verdict, o: &Option<Outcome>) -> bool {
    match (want, o) {
        (Verdict::Accepted, Some(Outcome::Accepted)) => true,
        (Verdict::Blame(r), Some(Outcome::Rejected(e))) => e.accountable() == Some(*r),
        (Verdict::Refused(r), Some(Outcome::Refused(got))) => r == got,
        (Verdict::Late, Some(Outcome::Rejected(SessionError::Expired))) => true,
        (Verdict::Late, Some(Outcome::Refused(TerminalReason::Expired))) => true,
        _ => false,
    }
}

struct Builder {
    rows: Vec<AttackRow>,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn probe_row(&mut self, fx: &mut Fixture, family: &'static str, case: String, want: Verdict, state: &BTreeMap<Aid, Host>, from: &Aid, to: &Aid, bytes: &[u8], now: Tick, sid: &Digest) {
        let p = fx.probe(state, from, to, bytes, now);
        let responder = if *to == fx.i { from } else { to };
        let (executed, revealed) = fx.counts(&p.after, sid, responder);
        let pass = judge(&want, &p.outcome);
        self.rows.push(AttackRow { family, case, expected: want, observed: describe(&p.outcome), pass, executed, revealed });
    }

    fn plain(&mut self, family: &'static str, case: &str, want: Verdict, observed: String, pass: bool) {
        self.rows.push(AttackRow { family, case: case.into(), expected: want, observed, pass, executed: 0, revealed: 0 });
    }
}

fn request_of(bytes: &[u8]) -> TaskMsg {
    match Frame::from_bytes(bytes) {
        Ok(Frame::Request(m)) | Ok(Frame::Response(m)) => m,
        other => panic!("not a task message: {other:?}"),
    }
}

fn find<'a>(hops: &'a [Hop], label: &str) -> Option<&'a Hop> {
    hops.iter().find(|h| h.label == label)
}

/// Re-signs a task message under the session key a corrupted sender holds.
fn forge(state: &BTreeMap<Aid, Host>, who: &Aid, sid: &Digest, mut msg: TaskMsg, label: &str) -> Vec<u8> {
    let k = *state[who].sessions[sid].k_ses().expect("open session");
    msg.tag = msg.compute_tag(&k, label);
    if label == "request" {
        Frame::Request(msg).to_bytes()
    } else {
        Frame::Response(msg).to_bytes()
    }
}

/// Labels of the message types whose every field is mutated.
pub const MUTATED: [&str; 5] = ["m0", "m1", "request 2", "response 2", "terminal"];

/// Runs the whole matrix against sessions of `q` rounds. Families that
/// need more rounds than `q` provides are skipped.
pub fn run_matrix(q: u64, seed: u64) -> AttackMatrix {
    assert!(q >= 1, "sessions need at least one round");
    let mut fx = Fixture::new(seed, q);
    let mut b = Builder { rows: Vec::new() };
    let (hops, sid, done) = fx.honest(&fx.r.clone(), q, b"task-1");
    let (i, r, c) = (fx.i.clone(), fx.r.clone(), fx.c.clone());

    // honest baseline
    let (executed, revealed) = fx.counts(&done, &sid, &r);
    let clean = hops.len() as u64 == 2 * q + 1 && executed == q && revealed == q;
    let summary = format!("{} hops, executed {executed}, revealed {revealed}", hops.len());
    b.rows.push(AttackRow { family: "baseline", case: "honest session".into(), expected: Verdict::Accepted, observed: summary, pass: clean, executed, revealed });
    let net = run_scenario(&baseline_scenario(q), Path::new("."), Some(seed)).map(|rep| (rep.passed(), rep.events.iter().filter(|(_, e)| e.outcome != Outcome::Accepted).count()));
    let (ok, observed) = match net {
        Ok((passed, rejected)) => (passed && rejected == 0, format!("{rejected} rejections over the network")),
        Err(e) => (false, e.to_string()),
    };
    b.plain("baseline", "honest session over the network", Verdict::Accepted, observed, ok);

    // every field of every message type, flipped by its sender
    for label in MUTATED {
        let Some(h) = find(&hops, label) else { continue };
        let want = Verdict::Blame(fx.role_of(&h.from));
        for path in Frame::leaf_paths(&h.bytes).expect("honest frame decodes") {
            let bad = mutate_frame(&h.bytes, &path, None).expect("path exists");
            let case = format!("{label} field {}", path.iter().map(usize::to_string).collect::<Vec<_>>().join("."));
            b.probe_row(&mut fx, "mutation", case, want.clone(), &h.before, &h.from, &h.to, &bad, 0, &sid);
        }
    }

    // every message sent a second time once the first copy was handled
    for (k, h) in hops.iter().enumerate() {
        let after = hops.get(k + 1).map_or(&done, |n| &n.before);
        let want = Verdict::Blame(fx.role_of(&h.from));
        b.probe_row(&mut fx, "replay", format!("{} again", h.label), want, after, &h.from, &h.to, &h.bytes, 0, &sid);
    }
    let refused = run_scenario(&network_replay_scenario(), Path::new("."), Some(seed))
        .map(|rep| rep.adversary.iter().filter(|a| a.result.is_err()).count());
    let ok = refused.as_ref().is_ok_and(|n| *n == 2);
    b.plain("replay", "network copy of honest traffic", Verdict::Channel, format!("{refused:?} refused"), ok);

    // later messages first
    for (early, late, sender) in [("request 2", "request 3", &i), ("response 2", "response 3", &r)] {
        let (Some(e), Some(l)) = (find(&hops, early), find(&hops, late)) else { continue };
        let want = Verdict::Blame(fx.role_of(sender));
        b.probe_row(&mut fx, "reorder", format!("{late} before {early}"), want, &e.before, &l.from, &l.to, &l.bytes, 0, &sid);
    }

    // a spent token under a fresh, correctly tagged message
    if let (Some(r2), Some(r3)) = (find(&hops, "request 2"), find(&hops, "request 3")) {
        let mut m = request_of(&r3.bytes);
        m.tok = request_of(&r2.bytes).tok;
        m.payload = b"forged".to_vec();
        let bytes = forge(&r3.before, &i, &sid, m, "request");
        b.probe_row(&mut fx, "token-reuse", "request token 2 in round 3".into(), Verdict::Blame(Role::Initiator), &r3.before, &i, &r, &bytes, 0, &sid);
    }
    if let (Some(s2), Some(s3)) = (find(&hops, "response 2"), find(&hops, "response 3")) {
        let mut m = request_of(&s3.bytes);
        m.tok = request_of(&s2.bytes).tok;
        let bytes = forge(&s3.before, &r, &sid, m, "response");
        b.probe_row(&mut fx, "token-reuse", "response token 2 in round 3".into(), Verdict::Blame(Role::Responder), &s3.before, &r, &i, &bytes, 0, &sid);
    }

    // tokens of one chain presented in another session
    if let Some(r2) = find(&hops, "request 2") {
        let stolen = request_of(&r2.bytes).tok;
        for (case, to, task) in [("same pair, other session", &r, &b"task-2"[..]), ("other responder", &c, &b"task-3"[..])] {
            let (other, sid2, _) = fx.honest(&to.clone(), q, task);
            let h = find(&other, "request 2").expect("same q");
            let mut m = request_of(&h.bytes);
            m.tok = stolen.clone();
            let bytes = forge(&h.before, &i, &sid2, m, "request");
            b.probe_row(&mut fx, "chain-reuse", case.into(), Verdict::Blame(Role::Initiator), &h.before, &i, to, &bytes, 0, &sid2);
        }
    }

    // more requests than the budget
    {
        let state = &find(&hops, "terminal").expect("trace ends with a notice").before;
        let prev = hops.iter().rev().find(|h| h.label.starts_with("response") || h.label == "m1").expect("m1 exists");
        let echo = match Frame::from_bytes(&prev.bytes) {
            Ok(Frame::Resp(m1)) => m1.tok.value,
            Ok(Frame::Response(m)) => m.tok.value,
            _ => unreachable!(),
        };
        let m = TaskMsg {
            sid,
            payload: b"one more".to_vec(),
            tok: NextTok { index: 0, value: hash(b"no such token"), terminal: None },
            echo,
            opening: None,
            tag: Digest([0; 32]),
        };
        let bytes = forge(state, &i, &sid, m, "request");
        b.probe_row(&mut fx, "budget", format!("forged request {}", q + 1), Verdict::Refused(TerminalReason::QuotaExhausted), state, &i, &r, &bytes, 0, &sid);
    }
    budget_rows(&mut b, q, seed);

    // lateness
    if let Some(r2) = find(&hops, "request 2") {
        b.probe_row(&mut fx, "expiry", "request after the deadline".into(), Verdict::Refused(TerminalReason::Expired), &r2.before, &i, &r, &r2.bytes, DELTA + 1, &sid);
    }
    let m1 = find(&hops, "m1").expect("m1 exists");
    b.probe_row(&mut fx, "expiry", "handshake answer after the deadline".into(), Verdict::Late, &m1.before, &r, &i, &m1.bytes, DELTA + 1, &sid);

    delegated_reuse(&mut fx, &mut b);
    sybil(&mut fx, &mut b);
    discovery(&mut fx, &mut b, q);

    AttackMatrix { q, rows: b.rows }
}

/// The matrix at three rounds per session.
pub fn run_attack_matrix() -> AttackMatrix {
    run_matrix(3, 17)
}

fn baseline_scenario(q: u64) -> String {
    let mut s = format!(
        "keys 4 6 4 4\nagent {RESPONDER} receive * 5\nagent {INITIATOR} send * 5\nrcp {RESPONDER} * {q} {DELTA}\n\
         session s1 {INITIATOR} {RESPONDER} q={q} delta={DELTA}\nrun\n"
    );
    for _ in 1..q {
        s.push_str("request s1 next\nrun\n");
    }
    s.push_str(&format!("close s1\nrun\nexpect s1 executed {q}\nexpect s1 audit clean\nexpect no-leaks\n"));
    s
}

fn network_replay_scenario() -> String {
    format!(
        "keys 4 6 4 4\nagent {RESPONDER} receive * 5\nagent {INITIATOR} send * 5\nrcp {RESPONDER} * 2 {DELTA}\n\
         session s1 {INITIATOR} {RESPONDER} q=2 delta={DELTA}\nreplay 0\nrun\nreplay 1\nrun\n"
    )
}

/// The honest initiator's own refusals at the end of its budget, and a
/// responder policy tighter than what the initiator asked for.
fn budget_rows(b: &mut Builder, q: u64, seed: u64) {
    for (ask, want) in [(q, "OwnBudgetExhausted"), (q + 2, "PeerBudgetExhausted")] {
        let mut fx = Fixture::new(seed ^ ask, q);
        let (i, r) = (fx.i.clone(), fx.r.clone());
        let (sid, m0) = fx.tb.open_session(&i, &r, b"t", ask, DELTA, b"1".to_vec(), 0).expect("open");
        let mut frame = Some(m0);
        let mut sent = 1;
        let mut err = None;
        while let Some(f) = frame.take() {
            let to = if sent % 2 == 1 { &r } else { &i };
            let from = if to == &r { &i } else { &r };
            match fx.tb.serve(to, from, &f, 0) {
                Some(reply) => frame = Some(reply),
                None => match fx.tb.next_request(&i, &sid, b"more".to_vec(), 0) {
                    Ok(req) => frame = Some(req),
                    Err(e) => err = Some(e.to_string()),
                },
            }
            sent += 1;
        }
        let (executed, revealed) = fx.counts(&fx.tb.hosts, &sid, &r);
        let label = err.unwrap_or_default();
        let expected = match want {
            "OwnBudgetExhausted" => SessionError::OwnBudgetExhausted.to_string(),
            _ => SessionError::PeerBudgetExhausted.to_string(),
        };
        let pass = label == expected && executed == q && revealed == q;
        b.rows.push(AttackRow {
            family: "budget",
            case: format!("initiator asks {ask}, responder grants {q}, request {}", q + 1),
            expected: Verdict::Local(want.into()),
            observed: label,
            pass,
            executed,
            revealed,
        });
    }
}

/// A second chain signed with a delegated one-time key that was already
/// spent on the first.
fn delegated_reuse(fx: &mut Fixture, b: &mut Builder) {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let (i, r) = (fx.i.clone(), fx.r.clone());
    let user = fx.tb.users.get_mut(i.uid()).expect("user");
    let mut dc = delegate_dynamic(2, 2, 4, user, &mut rng).expect("delegation");
    let mut cs = CSessionState::new(4, DELTA, 0);
    let task = hash(b"dyn");
    let mut open = |fx: &mut Fixture, chains, nonce| {
        let auth = fx.tb.grant(&i, &r).expect("grant");
        let keys = fx.tb.agents.get_mut(&i).expect("keys");
        let (m0, _) = open_component_session(&mut cs, keys, chains, task, nonce, auth, DELTA, b"x".to_vec(), 0, &mut rng).expect("open");
        Frame::Init(Box::new(m0)).to_bytes()
    };
    let n1 = fresh_sid_nonces(1, &mut ChaCha20Rng::seed_from_u64(6))[0];
    let sid1 = derive_sid(&task, &i, &r, &n1);
    let (chain1, c1) = authorize_chain_dynamic(&mut dc, &fx.tb.agents[&i], &r, &sid1).expect("first key");
    let first = open(fx, vec![(chain1, c1.clone())], n1);
    let n2 = fresh_sid_nonces(1, &mut ChaCha20Rng::seed_from_u64(7))[0];
    let sid2 = derive_sid(&task, &i, &r, &n2);
    let (chain2, _) = authorize_chain_dynamic(&mut dc, &fx.tb.agents[&i], &r, &sid2).expect("second key");
    let second = open(fx, vec![(chain2, c1)], n2);

    let state = fx.tb.hosts.clone();
    let p = fx.probe(&state, &i, &r, &first, 0);
    let ok = p.outcome == Some(Outcome::Accepted);
    b.plain("ots-reuse", "first use of the key", Verdict::Accepted, describe(&p.outcome), ok);
    b.probe_row(fx, "ots-reuse", "second chain under the spent key".into(), Verdict::Blame(Role::Initiator), &p.after, &i, &r, &second, 0, &sid2);
}

fn sybil(fx: &mut Fixture, b: &mut Builder) {
    let again = fx.tb.add_agent(RESPONDER, contact_policy(&[("receive", "*", 1)]).unwrap());
    let got = again.err().map(|e| e.to_string()).unwrap_or_else(|| "registered".into());
    let pass = got == ProviderError::DuplicateAid.to_string();
    b.plain("sybil", "second registration of an agent id", Verdict::Provider(ProviderError::DuplicateAid), got, pass);

    let again = fx.tb.add_user(fx.i.uid());
    let got = again.err().map(|e| e.to_string()).unwrap_or_else(|| "registered".into());
    let pass = got == ProviderError::DuplicateUid.to_string();
    b.plain("sybil", "second registration of a user id", Verdict::Provider(ProviderError::DuplicateUid), got, pass);

    let mut dir = KeyDirectory::default();
    dir.register(RESPONDER, b"first".to_vec());
    let took = dir.register(RESPONDER, b"second".to_vec());
    let pass = !took && dir.lookup(RESPONDER) == Some(&b"first"[..]);
    let observed = format!("rebound={took} key={:?}", dir.lookup(RESPONDER).map(String::from_utf8_lossy));
    b.plain("sybil", "second key for a directory identity", Verdict::Channel, observed, pass);
}

fn discovery(fx: &mut Fixture, b: &mut Builder, q: u64) {
    let (i, r) = (fx.i.clone(), fx.r.clone());
    let provider_row = |b: &mut Builder, case: &str, want: ProviderError, got: Result<Response, ProviderError>| {
        let observed = match &got {
            Ok(_) => "authorized".to_string(),
            Err(e) => format!("{e:?}"),
        };
        b.plain("discovery", case, Verdict::Provider(want.clone()), observed, got.err() == Some(want));
    };

    let picky = fx.tb.add_agent("dora@w.com:db", contact_policy(&[("receive", "zed@q.com:bot", 3)]).unwrap()).expect("picky");
    let got = fx.tb.grant(&i, &picky).map(|t| Response::Authorized(Box::new(t)));
    provider_row(b, "no rule covers the pair", ProviderError::NotAuthorized, got);

    let stingy = fx.tb.add_agent("erin@v.com:cal", contact_policy(&[("receive", "*", 1)]).unwrap()).expect("stingy");
    let _ = fx.tb.grant(&i, &stingy);
    let got = fx.tb.grant(&i, &stingy).map(|t| Response::Authorized(Box::new(t)));
    provider_row(b, "pair budget already spent", ProviderError::BudgetExhausted, got);

    let frame = Request::Discover { initiator: i.clone(), responder: r.clone() }.to_frame();
    let got = parse_response(&fx.tb.provider.handle_frame("mallory@m.com", &frame)).unwrap_or(Err(ProviderError::Malformed));
    provider_row(b, "discovery on behalf of another agent", ProviderError::AuthFailed, got);

    // a grant for one responder presented to another
    let auth = fx.tb.grant(&i, &fx.c.clone()).expect("grant for carol");
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let (keys, user) = fx.tb.agent_and_user(&i).expect("initiator");
    let (m0, _) = initiate(keys, auth, hash(b"t"), q, DELTA, user, b"x".to_vec(), 0, &mut rng).expect("initiate");
    let sid = m0.sid();
    let bytes = Frame::Init(Box::new(m0)).to_bytes();
    let state = fx.tb.hosts.clone();
    b.probe_row(fx, "discovery", "grant for another responder".into(), Verdict::Blame(Role::Initiator), &state, &i, &r, &bytes, 0, &sid);
}

/// Budget conservation at `q` rounds: every row of the matrix leaves the
/// honest responder at most `q` executions and the honest initiator at most
/// `q` revealed tokens.
pub fn budget_conservation(q: u64) -> (AttackMatrix, bool) {
    let m = run_matrix(q, 100 + q);
    let ok = m.rows.iter().all(|r| r.executed <= q && r.revealed <= q);
    (m, ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_is_all_green() {
        let m = run_attack_matrix();
        let bad: Vec<String> = m.failures().iter().map(|r| format!("{} / {}: {}", r.family, r.case, r.observed)).collect();
        assert!(bad.is_empty(), "{bad:#?}");
        for family in ["baseline", "mutation", "replay", "reorder", "token-reuse", "chain-reuse", "budget", "expiry", "ots-reuse", "sybil", "discovery"] {
            assert!(m.family(family).count() > 0, "{family} has no rows");
        }
    }

    #[test]
    fn one_mutation_row_per_field() {
        let m = run_attack_matrix();
        // sid, payload, token (index, value, terminal), echo, opening, tag
        let task_msg = 8;
        // sid, reason, tag
        let terminal = 3;
        let count = |prefix: &str| m.family("mutation").filter(|r| r.case.starts_with(&format!("{prefix} field"))).count();
        assert_eq!(count("request 2"), task_msg);
        assert_eq!(count("response 2"), task_msg);
        assert_eq!(count("terminal"), terminal);
        assert!(count("m0") > count("m1") && count("m1") > task_msg);
    }

    #[test]
    fn single_round_sessions_skip_what_they_cannot_have() {
        let m = run_matrix(1, 3);
        assert!(m.passed(), "{:#?}", m.failures());
        assert_eq!(m.family("reorder").count(), 0);
        assert_eq!(m.family("token-reuse").count(), 0);
    }

    #[test]
    fn csv_has_a_line_per_row() {
        let m = run_matrix(2, 4);
        assert_eq!(m.to_csv().lines().count(), m.rows.len() + 1);
    }
}
