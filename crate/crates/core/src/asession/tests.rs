use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::crypto::{hash, Digest};
use crate::encoding::flip_field;
use crate::policy::{AidPattern, ResponderPolicy};
use crate::testbed::{contact_policy, KeyHeights, Testbed};

const HEIGHTS: KeyHeights = KeyHeights { ca: 4, provider: 5, user: 5, agent: 4 };

struct Pair {
    tb: Testbed,
    i: Aid,
    r: Aid,
    rcp: ResponderPolicy,
    guard: ReplayGuard,
    rng: ChaCha20Rng,
}

fn pair(seed: u64, q_r: u64, delta_r: u64) -> Pair {
    let mut tb = Testbed::new(seed, HEIGHTS).unwrap();
    let r = tb.add_agent("alice@x.com:mail", contact_policy(&[("receive", "*", 50)]).unwrap()).unwrap();
    let i = tb.add_agent("bob@y.com:cal", contact_policy(&[("send", "*", 50)]).unwrap()).unwrap();
    let rcp = ResponderPolicy::new(r.clone(), AidPattern::Global, q_r, delta_r).unwrap();
    Pair { tb, i, r, rcp, guard: ReplayGuard::default(), rng: ChaCha20Rng::seed_from_u64(seed ^ 0xa5) }
}

fn echo(req: &[u8]) -> Vec<u8> {
    let mut v = b"ok:".to_vec();
    v.extend_from_slice(req);
    v
}

impl Pair {
    fn initiate(&mut self, q: u64, delta: u64, now: u64) -> Result<(HandshakeInit, SessionState), SessionError> {
        let auth = self.tb.grant(&self.i, &self.r).unwrap();
        let (keys, user) = self.tb.agent_and_user(&self.i).unwrap();
        initiate(keys, auth, hash(b"task"), q, delta, user, b"req-1".to_vec(), now, &mut self.rng)
    }

    fn respond(&mut self, m0: &HandshakeInit, now: u64) -> Result<(HandshakeResp, SessionState), SessionError> {
        let mut exec = echo;
        let ctx = ResponderCtx {
            keys: &self.tb.agents[&self.r],
            ca: self.tb.ca.public_key(),
            provider: self.tb.provider.keys(),
            rcp: Some(&self.rcp),
            user: self.tb.users.get_mut(self.r.uid()).unwrap(),
            guard: &mut self.guard,
            executor: &mut exec,
            now,
            rng: &mut self.rng,
        };
        respond(ctx, m0)
    }

    fn open(&mut self, q: u64, delta: u64) -> (SessionState, SessionState) {
        let (m0, mut ist) = self.initiate(q, delta, 0).unwrap();
        let (m1, rst) = self.respond(&m0, 0).unwrap();
        assert_eq!(ist.handle_handshake_resp(&m1, 0).unwrap(), b"ok:req-1");
        (ist, rst)
    }

    fn round(&mut self, ist: &mut SessionState, rst: &mut SessionState, now: u64) -> Result<Reply, SessionError> {
        let req = ist.send_request(b"more".to_vec(), now)?;
        rst.handle_request(&req, &mut echo, &mut self.guard, now)
    }
}

#[test]
fn three_token_trace() {
    let mut p = pair(1, 10, 100);
    let (m0, ist) = p.initiate(3, 50, 0).unwrap();
    assert_eq!(m0.tok.index, 2);
    assert!(m0.tok.terminal.is_some());
    assert_eq!(ist.ctr_icp, 2);
    assert_eq!(ist.status, Status::Handshaking);
    assert_eq!(ist.t_exp, 50);

    let (m1, rst) = p.respond(&m0, 0).unwrap();
    assert_eq!((m1.q, m1.delta), (3, 50));
    assert_eq!(rst.ctr_icp, 2);
    assert_eq!(rst.ctr_rcp, 2);
    let (mut ist, mut rst) = {
        let mut ist = ist;
        ist.handle_handshake_resp(&m1, 0).unwrap();
        (ist, rst)
    };
    assert_eq!(ist.k_ses(), rst.k_ses());
    assert_eq!(ist.ctr_rcp, 2);

    for expected_idx in [1u64, 0] {
        let req = ist.send_request(b"x".to_vec(), 1).unwrap();
        assert_eq!(req.tok.index, expected_idx);
        let Reply::Response(resp) = rst.handle_request(&req, &mut echo, &mut p.guard, 1).unwrap() else {
            panic!("expected response")
        };
        assert_eq!(ist.handle_response(&resp, 1).unwrap(), b"ok:x");
    }
    assert_eq!((ist.ctr_icp, ist.ctr_rcp, ist.requests, rst.requests), (0, 0, 3, 3));
    assert_eq!(ist.send_request(b"x".to_vec(), 1).unwrap_err(), SessionError::OwnBudgetExhausted);
}

#[test]
fn responder_budget_is_the_minimum() {
    let mut p = pair(2, 2, 10);
    let (m0, mut ist) = p.initiate(5, 50, 0).unwrap();
    let (m1, _) = p.respond(&m0, 0).unwrap();
    assert_eq!((m1.q, m1.delta), (2, 10));
    ist.handle_handshake_resp(&m1, 3).unwrap();
    assert_eq!(ist.t_exp, 13);
}

#[test]
fn refusal_and_bad_parameters() {
    let mut p = pair(3, 5, 10);
    let auth = p.tb.grant(&p.i, &p.r).unwrap();
    let keys = p.tb.agents.get_mut(&p.i).unwrap();
    let r = initiate(keys, auth.clone(), hash(b"t"), 3, 5, &mut Refuse, vec![], 0, &mut p.rng);
    assert_eq!(r.unwrap_err(), SessionError::UserRefused);
    assert!(matches!(p.initiate(3, 0, 0), Err(SessionError::InvalidParameter(_))));
    assert!(matches!(p.initiate(0, 5, 0), Err(SessionError::InvalidParameter(_))));

    let (m0, _) = p.initiate(3, 5, 0).unwrap();
    let mut exec = echo;
    let ctx = ResponderCtx {
        keys: &p.tb.agents[&p.r],
        ca: p.tb.ca.public_key(),
        provider: p.tb.provider.keys(),
        rcp: Some(&p.rcp),
        user: &mut Refuse,
        guard: &mut p.guard,
        executor: &mut exec,
        now: 0,
        rng: &mut p.rng,
    };
    assert_eq!(respond(ctx, &m0).unwrap_err(), SessionError::UserRefused);
    // refusal leaves no trace, so the same m0 is still acceptable
    assert!(p.respond(&m0, 0).is_ok());
}

#[test]
fn forged_initial_token_blames_initiator() {
    let mut p = pair(4, 5, 10);
    let (mut m0, _) = p.initiate(3, 5, 0).unwrap();
    m0.tok.value = Digest([7; 32]);
    let keys = p.tb.agents.get_mut(&p.i).unwrap();
    m0.sig_init = keys.sign(&m0.signed_payload()).unwrap();
    let err = p.respond(&m0, 0).unwrap_err();
    assert_eq!(err, SessionError::Rejected { fault: Fault::BadToken, accountable: Role::Initiator });
}

#[test]
fn handshake_replay_is_caught() {
    let mut p = pair(5, 5, 10);
    let (m0, _) = p.initiate(3, 5, 0).unwrap();
    p.respond(&m0, 0).unwrap();
    assert_eq!(p.respond(&m0, 1).unwrap_err().fault(), Some(Fault::ReplayedNonce));
}

#[test]
fn quota_terminal_after_n_requests() {
    let mut p = pair(6, 2, 10);
    let (mut ist, mut rst) = p.open(2, 10);
    let Reply::Response(r) = p.round(&mut ist, &mut rst, 1).unwrap() else { panic!() };
    ist.handle_response(&r, 1).unwrap();
    // initiator refuses to overspend; a well-formed extra request from a
    // corrupted initiator still only gets a terminal
    assert_eq!(ist.send_request(vec![], 1).unwrap_err(), SessionError::OwnBudgetExhausted);
    let mut forged = TaskMsg {
        sid: rst.sid,
        payload: vec![],
        tok: crate::crypto::NextTok { index: 0, value: Digest([0; 32]), terminal: None },
        echo: r.tok.value,
        opening: None,
        tag: Digest([0; 32]),
    };
    forged.tag = forged.compute_tag(ist.k_ses().unwrap(), "request");
    let Reply::Terminal(t) = rst.handle_request(&forged, &mut echo, &mut p.guard, 1).unwrap() else {
        panic!("expected terminal")
    };
    assert_eq!(t.reason, TerminalReason::QuotaExhausted);
    assert_eq!(rst.requests, 2);
    assert_eq!(rst.status, Status::Exhausted);
    let (summary, notice) = rst.close();
    assert!(notice.is_none());
    assert_eq!((summary.cause, summary.own_revealed, summary.peer_accepted), (Status::Exhausted, 2, 2));
}

#[test]
fn tampered_payload_fails_tag() {
    let mut p = pair(7, 5, 10);
    let (mut ist, mut rst) = p.open(3, 10);
    let mut req = ist.send_request(b"pay 5".to_vec(), 1).unwrap();
    req.payload = b"pay 500".to_vec();
    let err = rst.handle_request(&req, &mut echo, &mut p.guard, 1).unwrap_err();
    assert_eq!(err, SessionError::Rejected { fault: Fault::BadTag, accountable: Role::Initiator });
    assert_eq!(rst.status, Status::Aborted);
    let (s, _) = rst.close();
    assert_eq!((s.fault, s.accountable), (Some(Fault::BadTag), Some(Role::Initiator)));
}

#[test]
fn reused_responder_token_is_rejected() {
    let mut p = pair(8, 5, 10);
    let (mut ist, mut rst) = p.open(4, 10);
    let Reply::Response(first) = p.round(&mut ist, &mut rst, 1).unwrap() else { panic!() };
    ist.handle_response(&first, 1).unwrap();
    let req = ist.send_request(b"again".to_vec(), 1).unwrap();
    // the responder answers the new request with the old token
    let k = *rst.k_ses().unwrap();
    let mut stale = TaskMsg { echo: req.tok.value, payload: b"x".to_vec(), ..first.clone() };
    stale.tag = stale.compute_tag(&k, "response");
    let err = ist.handle_response(&stale, 1).unwrap_err();
    assert_eq!(err, SessionError::Rejected { fault: Fault::BadToken, accountable: Role::Responder });
}

#[test]
fn rcp_signature_over_wrong_budget() {
    let mut p = pair(9, 5, 10);
    let (m0, mut ist) = p.initiate(3, 10, 0).unwrap();
    let (mut m1, rst) = p.respond(&m0, 0).unwrap();
    let terminal = m1.tok.terminal.unwrap();
    let user = p.tb.users.get_mut(p.r.uid()).unwrap();
    m1.sig_rcp = user.approve(&Approval { kind: ApprovalKind::Rcp, value: terminal, budget: 4 }).unwrap();
    m1.tag = m1.compute_tag(rst.k_ses().unwrap());
    let err = ist.handle_handshake_resp(&m1, 0).unwrap_err();
    assert_eq!(err, SessionError::Rejected { fault: Fault::BadUserSig, accountable: Role::Responder });
}

#[test]
fn expiry_is_inclusive() {
    let mut p = pair(10, 5, 4);
    let (mut ist, mut rst) = p.open(5, 4);
    assert_eq!(rst.t_exp, 4);
    let Reply::Response(r) = p.round(&mut ist, &mut rst, 4).unwrap() else { panic!() };
    ist.handle_response(&r, 4).unwrap();
    assert_eq!(ist.send_request(vec![], 5).unwrap_err(), SessionError::Expired);

    // an initiator that ignores its own clock still hits the responder's
    let mut p = pair(11, 5, 4);
    let (mut ist, mut rst) = p.open(5, 4);
    let req = ist.send_request(vec![], 4).unwrap();
    let Reply::Terminal(t) = rst.handle_request(&req, &mut echo, &mut p.guard, 5).unwrap() else { panic!() };
    assert_eq!(t.reason, TerminalReason::Expired);
    assert_eq!(ist.handle_terminal(&t).unwrap(), Status::Expired);
}

#[test]
fn revealed_links_are_forgotten() {
    let mut p = pair(12, 6, 10);
    let (mut ist, mut rst) = p.open(6, 10);
    for round in 1..=3u64 {
        let Reply::Response(r) = p.round(&mut ist, &mut rst, 1).unwrap() else { panic!() };
        ist.handle_response(&r, 1).unwrap();
        let next = rst.own_next_index().unwrap();
        assert_eq!(next, 6 - 2 - round);
        assert_eq!(rst.own_retained_top(), Some(next + 1));
        assert_eq!(ist.own_retained_top(), Some(next + 1));
    }
}

#[test]
fn close_summaries_and_notice() {
    let mut p = pair(13, 5, 10);
    let (mut ist, mut rst) = p.open(3, 10);
    let (si, notice) = ist.close();
    assert_eq!(si.cause, Status::Closed);
    assert_eq!((si.requests, si.responses, si.own_revealed, si.peer_accepted), (1, 1, 1, 1));
    assert_eq!(rst.handle_terminal(&notice.unwrap()).unwrap(), Status::Closed);
    let (sr, none) = rst.close();
    assert!(none.is_none());
    assert_eq!(sr.cause, Status::Closed);
    assert_eq!(SessionSummary::from_canonical(&sr.to_canonical()).unwrap(), sr);
}

#[test]
fn honest_transcript_audits_clean() {
    let mut p = pair(14, 5, 10);
    let (mut ist, mut rst) = p.open(3, 10);
    for _ in 0..2 {
        let Reply::Response(r) = p.round(&mut ist, &mut rst, 1).unwrap() else { panic!() };
        ist.handle_response(&r, 1).unwrap();
    }
    let frames: Vec<Vec<u8>> = ist.transcript.frames().map(<[u8]>::to_vec).collect();
    let report = audit_transcript(&frames, p.tb.ca.public_key(), p.tb.provider.keys());
    assert_eq!(report.violation, None);
    assert_eq!((report.requests, report.responses), (3, 3));
    let log = rst.transcript.to_log();
    assert_eq!(Transcript::from_log(rst.sid, &log).unwrap(), rst.transcript);
}

/// Flips every leaf field of every frame of an honest session in turn and
/// checks that the receiver rejects it and blames the sender.
#[test]
fn single_field_mutations_blame_the_sender() {
    let mut p = pair(15, 5, 10);
    let (m0, ist_for_m0) = p.initiate(3, 10, 0).unwrap();
    let m0_bytes = Frame::Init(Box::new(m0.clone())).to_bytes();
    let mut checked = 0;
    for path in Frame::leaf_paths(&m0_bytes).unwrap() {
        let mut bytes = m0_bytes[1..].to_vec();
        bytes = flip_field(&bytes, &path).unwrap();
        bytes.insert(0, m0_bytes[0]);
        match Frame::from_bytes(&bytes) {
            Ok(Frame::Init(bad)) => {
                let err = p.respond(&bad, 0).expect_err("mutated m0 accepted");
                assert_eq!(err.accountable(), Some(Role::Initiator), "path {path:?}: {err}");
            }
            Ok(_) => unreachable!(),
            Err(_) => {}
        }
        checked += 1;
    }
    assert!(checked > 20);

    let (m1, _) = p.respond(&m0, 0).unwrap();
    let m1_bytes = Frame::Resp(Box::new(m1.clone())).to_bytes();
    for path in Frame::leaf_paths(&m1_bytes).unwrap() {
        let mut bytes = flip_field(&m1_bytes[1..], &path).unwrap();
        bytes.insert(0, m1_bytes[0]);
        if let Ok(Frame::Resp(bad)) = Frame::from_bytes(&bytes) {
            let mut ist = ist_for_m0.clone();
            let err = ist.handle_handshake_resp(&bad, 0).expect_err("mutated m1 accepted");
            assert!(
                err.accountable() == Some(Role::Responder) || err.fault() == Some(Fault::UnknownSession),
                "path {path:?}: {err}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Whatever the initiator asks for, the responder never executes more
    /// than the negotiated minimum.
    #[test]
    fn responder_never_overserves(q_i in 1u64..5, q_r in 1u64..5, extra in 0usize..3, seed in 0u64..1000) {
        let mut p = pair(1000 + seed, q_r, 10);
        let (mut ist, mut rst) = p.open(q_i, 10);
        let mut served = 1;
        for _ in 0..(q_i as usize + extra) {
            match ist.send_request(vec![1], 1) {
                Ok(req) => match rst.handle_request(&req, &mut echo, &mut p.guard, 1).unwrap() {
                    Reply::Response(r) => { served += 1; ist.handle_response(&r, 1).unwrap(); }
                    Reply::Terminal(_) => break,
                },
                Err(_) => break,
            }
        }
        prop_assert_eq!(served, q_i.min(q_r));
        prop_assert!(rst.requests <= q_i.min(q_r));
    }
}
