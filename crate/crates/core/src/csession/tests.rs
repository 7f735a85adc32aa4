use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::asession::{ReplayGuard, Status};
use crate::crypto::{merkle::leaf_hash, merkle_verify};
use crate::policy::{AidPattern, ResponderPolicy};
use crate::testbed::{contact_policy, stub_execute, KeyHeights, LocalLink, Outcome, Testbed};

const HEIGHTS: KeyHeights = KeyHeights { ca: 4, provider: 5, user: 4, agent: 4 };

struct World {
    tb: Testbed,
    orch: Aid,
    rs: Vec<Aid>,
    rng: ChaCha20Rng,
}

fn world(seed: u64, responders: usize) -> World {
    let mut tb = Testbed::new(seed, HEIGHTS).unwrap();
    let orch = tb.add_agent("orch@o.com:planner", contact_policy(&[("send", "*", 20)]).unwrap()).unwrap();
    let mut rs = Vec::new();
    for k in 0..responders {
        let r = tb.add_agent(&format!("r{k}@s{k}.com:svc"), contact_policy(&[("receive", "*", 20)]).unwrap()).unwrap();
        tb.set_rcp(&r, "*", 10, 100).unwrap();
        rs.push(r);
    }
    World { tb, orch, rs, rng: ChaCha20Rng::seed_from_u64(seed) }
}

fn icp(orch: &Aid, m: u64, n: u64, delta: Tick) -> InitiatorPolicy {
    InitiatorPolicy::new(orch.clone(), m * n, delta, m, n).unwrap()
}

impl World {
    fn commit(&mut self, plan: &WorkPlan) -> StaticCommitment {
        let nonces = fresh_sid_nonces(plan.responders.len(), &mut self.rng);
        let user = self.tb.users.get_mut(self.orch.uid()).unwrap();
        commit_static(plan, &self.tb.agents[&self.orch], &nonces, user).unwrap()
    }

    fn static_session(&mut self, m: u64, n: u64) -> CSession {
        let plan = plan_static(hash(b"job"), self.rs.clone(), icp(&self.orch, m, n, 100)).unwrap();
        let sc = self.commit(&plan);
        CSession::new(plan, ChainSource::Static(sc), 0)
    }

    fn drive(&mut self, cs: &mut CSession, clock: &Cell<Tick>) -> CSessionReport {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let mut link = LocalLink::new(&mut self.tb, self.orch.clone(), clock);
        let mut task = StubTask { max_rounds: None, max_hops: 8 };
        drive_csession(cs, &mut link, &mut task, clock, &mut rng)
    }

    /// Hands `m0` straight to responder `k`.
    fn respond(&mut self, k: usize, m0: &HandshakeInit, guard: &mut ReplayGuard) -> Result<HandshakeResp, SessionError> {
        let r = &self.rs[k];
        let rcp = ResponderPolicy::new(r.clone(), AidPattern::Global, 10, 100).unwrap();
        let mut exec = stub_execute;
        let ctx = ResponderCtx {
            keys: &self.tb.agents[r],
            ca: self.tb.ca.public_key(),
            provider: self.tb.provider.keys(),
            rcp: Some(&rcp),
            user: self.tb.users.get_mut(r.uid()).unwrap(),
            guard,
            executor: &mut exec,
            now: 0,
            rng: &mut self.rng,
        };
        respond_component(ctx, m0).map(|(m1, _)| m1)
    }

    fn open(&mut self, cs: &mut CSessionState, k: usize, slot: &ComponentSlot, now: Tick) -> Result<HandshakeInit, CSessionError> {
        let auth = self.tb.grant(&self.orch, &self.rs[k]).unwrap();
        let keys = self.tb.agents.get_mut(&self.orch).unwrap();
        let task = hash(b"job");
        open_component_session(cs, keys, slot.chains.clone(), task, slot.sid_nonce, auth, 50, b"r".to_vec(), now, &mut self.rng)
            .map(|(m0, _)| m0)
    }
}

#[test]
fn static_plans_split_chains() {
    let w = world(1, 0);
    let aids: Vec<Aid> = (0..11).map(|k| Aid::parse(&format!("u@d{k}.com:x")).unwrap()).collect();
    let p = plan_static(hash(b"t"), aids[..10].to_vec(), icp(&w.orch, 10, 2, 9)).unwrap();
    assert!(p.assignments.iter().all(|a| a.chains.len() == 1));
    let p = plan_static(hash(b"t"), aids[..1].to_vec(), icp(&w.orch, 10, 2, 9)).unwrap();
    assert_eq!(p.assignments[0].chains.len(), 10);
    assert!(matches!(
        plan_static(hash(b"t"), aids.clone(), icp(&w.orch, 10, 2, 9)),
        Err(CSessionError::TooManyResponders { planned: 11, chains: 10 })
    ));
}

#[test]
fn static_commitment_proofs() {
    let mut w = world(2, 2);
    let plan = plan_static(hash(b"job"), w.rs.clone(), icp(&w.orch, 4, 3, 100)).unwrap();
    let sc = w.commit(&plan);
    let mut count = 0;
    for slot in &sc.slots {
        for (chain, c) in &slot.chains {
            let ChainCommitment::Merkle { root, proof, .. } = c else { panic!() };
            assert_eq!(proof.len(), 2);
            assert!(merkle_verify(root, &chain.terminal(), proof));
            assert!(!merkle_verify(root, &hash(b"other terminal"), proof));
            count += 1;
        }
    }
    assert_eq!(count, 4);
    let mut refuse = crate::asession::Refuse;
    let nonces = fresh_sid_nonces(2, &mut w.rng);
    let r = commit_static(&plan, &w.tb.agents[&w.orch], &nonces, &mut refuse);
    assert_eq!(r.unwrap_err(), CSessionError::UserRefused);
}

#[test]
fn component_handshakes_check_proofs() {
    let mut w = world(3, 2);
    let plan = plan_static(hash(b"job"), w.rs.clone(), icp(&w.orch, 2, 3, 100)).unwrap();
    let sc = w.commit(&plan);
    let mut cs = CSessionState::new(6, 100, 0);
    let mut guard = ReplayGuard::default();

    let m0 = w.open(&mut cs, 0, &sc.slots[0], 0).unwrap();
    let ChainCommitment::Merkle { proof, .. } = &m0.commitment else { panic!() };
    assert_eq!(proof.leaf_index, 0);
    assert!(w.respond(0, &m0, &mut guard).is_ok());

    // chain 1's terminal presented with chain 0's proof
    let mut crossed = sc.slots[1].clone();
    let ChainCommitment::Merkle { proof: p0, .. } = &sc.slots[0].chains[0].1 else { panic!() };
    if let ChainCommitment::Merkle { proof, .. } = &mut crossed.chains[0].1 {
        *proof = p0.clone();
    }
    let m0 = w.open(&mut cs, 1, &crossed, 0).unwrap();
    assert_eq!(w.respond(1, &m0, &mut guard).unwrap_err().fault(), Some(Fault::BadProof));

    // a sibling flipped inside an otherwise valid proof
    let mut forged = sc.slots[1].clone();
    if let ChainCommitment::Merkle { proof, .. } = &mut forged.chains[0].1 {
        proof.siblings[0].0 = hash(b"x");
    }
    let m0 = w.open(&mut cs, 1, &forged, 0).unwrap();
    assert_eq!(w.respond(1, &m0, &mut guard).unwrap_err().fault(), Some(Fault::BadProof));

    // a root the user never signed
    let mut rerooted = sc.slots[1].clone();
    if let ChainCommitment::Merkle { root, .. } = &mut rerooted.chains[0].1 {
        *root = hash(b"random root");
    }
    let m0 = w.open(&mut cs, 1, &rerooted, 0).unwrap();
    assert_eq!(w.respond(1, &m0, &mut guard).unwrap_err().fault(), Some(Fault::BadUserSig));

    let m0 = w.open(&mut cs, 1, &sc.slots[1], 0).unwrap();
    assert!(w.respond(1, &m0, &mut guard).is_ok());

    let mut late = CSessionState::new(6, 10, 0);
    assert_eq!(w.open(&mut late, 1, &sc.slots[1], 11).unwrap_err(), CSessionError::GlobalExpired);
    assert!(matches!(w.open(&mut late, 1, &ComponentSlot { chains: vec![], ..sc.slots[1].clone() }, 0), Err(CSessionError::NoChainLeft(_))));
}

#[test]
fn root_signed_over_wrong_length_is_rejected() {
    let mut w = world(4, 1);
    let mut cs = w.static_session(2, 3);
    let ChainSource::Static(sc) = &mut cs.source else { panic!() };
    let user = w.tb.users.get_mut(w.orch.uid()).unwrap();
    let wrong = user.approve(&Approval { kind: ApprovalKind::IcpRoot, value: sc.root, budget: 4 }).unwrap();
    for slot in &mut sc.slots {
        for (_, c) in &mut slot.chains {
            if let ChainCommitment::Merkle { root_sig, .. } = c {
                *root_sig = wrong.clone();
            }
        }
    }
    let report = w.drive(&mut cs, &Cell::new(0));
    let s = report.components[0].summary.as_ref().unwrap();
    assert_eq!(s.cause, Status::Aborted);
    let ev = &w.tb.hosts[&w.rs[0]].events[0];
    assert_eq!(ev.outcome, Outcome::Rejected(SessionError::Rejected { fault: Fault::BadUserSig, accountable: Role::Initiator }));
}

#[test]
fn dynamic_delegation() {
    let mut w = world(5, 2);
    let user = w.tb.users.get_mut(w.orch.uid()).unwrap();
    let dc = delegate_dynamic(4, 3, 12, user, &mut w.rng).unwrap();
    assert_eq!(dc.tree.prove(3).unwrap().len(), 2);
    let one = delegate_dynamic(1, 3, 3, user, &mut w.rng).unwrap();
    assert_eq!(one.root, leaf_hash(&one.ots[0].public_key().digest()));
    assert!(matches!(delegate_dynamic(2, 3, 7, user, &mut w.rng), Err(CSessionError::InvalidParameter(_))));

    let mut dc = delegate_dynamic(2, 3, 6, user, &mut w.rng).unwrap();
    let keys = &w.tb.agents[&w.orch];
    let sid = hash(b"s");
    authorize_chain_dynamic(&mut dc, keys, &w.rs[0], &sid).unwrap();
    authorize_chain_dynamic(&mut dc, keys, &w.rs[1], &sid).unwrap();
    assert_eq!(authorize_chain_dynamic(&mut dc, keys, &w.rs[0], &sid).unwrap_err(), CSessionError::ChainsExhausted);
}

#[test]
fn delegated_key_reuse_is_caught() {
    let mut w = world(6, 1);
    let user = w.tb.users.get_mut(w.orch.uid()).unwrap();
    let mut dc = delegate_dynamic(2, 3, 6, user, &mut w.rng).unwrap();
    let mut cs = CSessionState::new(6, 100, 0);
    let mut guard = ReplayGuard::default();

    let nonce = fresh_sid_nonces(1, &mut w.rng)[0];
    let sid = derive_sid(&hash(b"job"), &w.orch, &w.rs[0], &nonce);
    let (chain, c) = authorize_chain_dynamic(&mut dc, &w.tb.agents[&w.orch], &w.rs[0], &sid).unwrap();
    let slot = ComponentSlot { responder: w.rs[0].clone(), sid_nonce: nonce, sid, chains: vec![(chain, c.clone())], used: false };
    let m0 = w.open(&mut cs, 0, &slot, 0).unwrap();
    w.respond(0, &m0, &mut guard).unwrap();

    // a second chain presented under the already spent one-time key
    let nonce = fresh_sid_nonces(1, &mut w.rng)[0];
    let sid = derive_sid(&hash(b"job"), &w.orch, &w.rs[0], &nonce);
    let (chain2, _) = authorize_chain_dynamic(&mut dc, &w.tb.agents[&w.orch], &w.rs[0], &sid).unwrap();
    let slot = ComponentSlot { responder: w.rs[0].clone(), sid_nonce: nonce, sid, chains: vec![(chain2, c)], used: false };
    let m0 = w.open(&mut cs, 0, &slot, 0).unwrap();
    assert_eq!(w.respond(0, &m0, &mut guard).unwrap_err().fault(), Some(Fault::ReusedOtsKey));
}

#[test]
fn static_run_spends_exactly_the_budget() {
    let mut w = world(7, 2);
    let mut cs = w.static_session(2, 3);
    let report = w.drive(&mut cs, &Cell::new(0));
    assert_eq!(report.halted, None);
    assert_eq!(report.global.ctr_global, 6);
    assert_eq!(report.tokens_consumed(), 6);
    for c in &report.components {
        let s = c.summary.as_ref().unwrap();
        assert_eq!((s.own_revealed, s.requests, s.responses), (3, 3, 3));
    }
}

#[test]
fn global_cap_halts_the_run() {
    let mut w = world(8, 2);
    let mut cs = w.static_session(2, 3).with_global_cap(4);
    let report = w.drive(&mut cs, &Cell::new(0));
    assert_eq!(report.halted, Some(CSessionError::GlobalQuotaExhausted));
    assert_eq!(report.global.ctr_global, 4);
    assert_eq!(report.tokens_consumed(), 4);
    assert_eq!(report.components.len(), 2);
    assert!(!report.to_log().is_empty());
}

#[test]
fn chains_roll_over_within_one_component() {
    let mut w = world(9, 1);
    let mut cs = w.static_session(3, 2);
    let report = w.drive(&mut cs, &Cell::new(0));
    let s = report.components[0].summary.as_ref().unwrap();
    assert_eq!((s.own_revealed, s.peer_accepted, s.cause), (6, 6, Status::Closed));
    assert_eq!(report.global.ctr_global, 6);
}

#[test]
fn misbehaving_responder_is_isolated() {
    let mut w = world(10, 2);
    let mut cs = w.static_session(2, 3);
    let clock = Cell::new(0);
    let bad = w.rs[0].clone();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut link = LocalLink::new(&mut w.tb, w.orch.clone(), &clock);
    let mut seen = 0;
    link.tamper = Some(Box::new(move |to: &Aid, reply: &mut Vec<u8>| {
        if *to == bad {
            seen += 1;
            if seen == 2 {
                // break the framing of one response
                let last = reply.len() - 40;
                reply[last] ^= 1;
            }
        }
    }));
    let mut task = StubTask { max_rounds: None, max_hops: 8 };
    let report = drive_csession(&mut cs, &mut link, &mut task, &clock, &mut rng);
    let first = report.components[0].summary.as_ref().unwrap();
    assert_eq!(first.cause, Status::Aborted);
    assert_eq!(first.accountable, Some(Role::Responder));
    let second = report.components[1].summary.as_ref().unwrap();
    assert_eq!((second.cause, second.own_revealed, second.fault), (Status::Closed, 3, None));
}

#[test]
fn global_deadline_bounds_components() {
    let mut w = world(11, 2);
    let plan = plan_static(hash(b"job"), w.rs.clone(), icp(&w.orch, 2, 3, 5)).unwrap();
    let sc = w.commit(&plan);
    let mut cs = CSession::new(plan, ChainSource::Static(sc), 0);
    let clock = Cell::new(0);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    struct Slow<'c>(&'c Cell<Tick>);
    impl TaskHook for Slow<'_> {
        fn next_request(&mut self, _: &Aid, round: u64, _: Option<&[u8]>) -> Option<Vec<u8>> {
            self.0.set(self.0.get() + 2);
            Some(vec![round as u8])
        }
        fn next_responder(&mut self, _: usize, _: Option<&[u8]>, _: &[Aid]) -> Option<Aid> {
            None
        }
    }
    let mut link = LocalLink::new(&mut w.tb, w.orch.clone(), &clock);
    let report = drive_csession(&mut cs, &mut link, &mut Slow(&clock), &clock, &mut rng);
    assert_eq!(report.global.t_exp_global, 5);
    assert_eq!(report.halted, Some(CSessionError::GlobalExpired));
    let s = report.components[0].summary.as_ref().unwrap();
    assert!(s.requests < 3);
}

#[test]
fn dynamic_run_uses_each_key_once() {
    let mut w = world(12, 3);
    let plan = plan_dynamic(hash(b"job"), w.rs.clone(), icp(&w.orch, 3, 2, 100)).unwrap();
    let user = w.tb.users.get_mut(w.orch.uid()).unwrap();
    let dc = delegate_dynamic(3, 2, 6, user, &mut w.rng).unwrap();
    let mut cs = CSession::new(plan, ChainSource::Dynamic(dc), 0);
    let report = w.drive(&mut cs, &Cell::new(0));
    assert_eq!(report.halted, Some(CSessionError::ChainsExhausted));
    let done: Vec<_> = report.components.iter().filter_map(|c| c.summary.as_ref()).collect();
    assert_eq!(done.len(), 3);
    assert!(done.iter().all(|s| s.own_revealed == 2 && s.fault.is_none()));
    assert_eq!(report.global.ctr_global, 6);
    let keys: usize = w.rs.iter().map(|r| w.tb.hosts[r].guard.ots_keys.len()).sum();
    assert_eq!(keys, 3);
}

#[test]
fn deadline_is_rechecked_after_a_slow_first_payload() {
    let mut w = world(13, 2);
    let plan = plan_static(hash(b"job"), w.rs.clone(), icp(&w.orch, 2, 1, 5)).unwrap();
    let sc = w.commit(&plan);
    let mut cs = CSession::new(plan, ChainSource::Static(sc), 0);
    let clock = Cell::new(0);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    struct SlowStart<'c>(&'c Cell<Tick>);
    impl TaskHook for SlowStart<'_> {
        fn next_request(&mut self, _: &Aid, round: u64, _: Option<&[u8]>) -> Option<Vec<u8>> {
            if round > 0 {
                return None;
            }
            self.0.set(self.0.get() + 4);
            Some(vec![1])
        }
        fn next_responder(&mut self, _: usize, _: Option<&[u8]>, _: &[Aid]) -> Option<Aid> {
            None
        }
    }
    let mut link = LocalLink::new(&mut w.tb, w.orch.clone(), &clock);
    let report = drive_csession(&mut cs, &mut link, &mut SlowStart(&clock), &clock, &mut rng);
    drop(link);
    assert_eq!(report.halted, Some(CSessionError::GlobalExpired));
    assert_eq!(report.global.ctr_global, 1);
    let second = &w.rs[1];
    assert!(w.tb.hosts[second].events.is_empty());
}
