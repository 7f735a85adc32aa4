use std::path::Path;

use super::*;
use crate::asession::{Fault, Role, Status};

const HEADER: &str = "
seed 11
keys 4 5 4 4
agent alice@x.com:mail receive * 5
agent bob@y.com:cal send * 5
rcp alice@x.com:mail * 3 100
";

fn run(body: &str) -> RunReport {
    run_scenario(&format!("{HEADER}{body}"), Path::new("."), None).unwrap()
}

fn failures(r: &RunReport) -> Vec<String> {
    r.expectations.iter().filter(|e| !e.passed).map(|e| format!("{}: {}", e.text, e.detail)).collect()
}

const HONEST: &str = "
session s1 bob@y.com:cal alice@x.com:mail q=3 delta=50 req=first
run
request s1 second
run
request s1 third
run
expect s1 executed 3
expect s1 accepted 3
expect s1 revealed 3
request s1 fourth
expect s1 error OwnBudgetExhausted
close s1
run
expect s1 status initiator exhausted
expect s1 status responder exhausted
expect s1 audit clean
expect no-leaks
";

#[test]
fn clock_moves_only_forward() {
    let c = SimClock::new();
    assert_eq!((c.read(), c.read()), (0, 0));
    assert_eq!(c.advance(5), Ok(5));
    assert_eq!(c.read(), 5);
    assert_eq!(c.advance(0), Err(NetError::ZeroAdvance));
    assert_eq!(c.read(), 5);
}

#[test]
fn directory_keeps_the_first_binding() {
    let mut d = KeyDirectory::default();
    assert!(d.register("a@b:c", vec![1]));
    assert!(!d.register("a@b:c", vec![2]));
    assert_eq!(d.lookup("a@b:c"), Some(&[1u8][..]));
    assert_eq!(d.lookup("x@y:z"), None);
}

fn two_party_net() -> (Network, Aid, Aid) {
    let mut net = Network::new();
    let a = Aid::parse("a@x.com:m").unwrap();
    let b = Aid::parse("b@y.com:n").unwrap();
    net.directory.register(a.as_str(), vec![1]);
    net.directory.register(b.as_str(), vec![2]);
    (net, a, b)
}

#[test]
fn channels_deliver_in_order_and_leak_only_lengths() {
    let (mut net, a, b) = two_party_net();
    assert_eq!(net.recv(&a, &b, 0), None);
    for k in 0..3u8 {
        net.send(&a, &b, vec![k; 4], 0).unwrap();
    }
    for k in 0..3u8 {
        assert_eq!(net.recv(&a, &b, 0), Some(vec![k; 4]));
    }
    assert_eq!(net.recv(&a, &b, 0), None);
    assert!(net.observations.iter().all(|o| o.plaintext.is_none() && o.len == 4));
    let stranger = Aid::parse("z@z.com:z").unwrap();
    assert_eq!(net.send(&a, &stranger, vec![], 0), Err(NetError::UnknownIdentity(stranger.to_string())));
}

#[test]
fn corrupted_endpoints_expose_plaintext_and_allow_forgery() {
    let (mut net, a, b) = two_party_net();
    let id = net.send(&a, &b, vec![7, 0, 0, 0, 1, 9], 0).unwrap();
    assert_eq!(net.apply(&AdversaryAction::Replay(id), 0), Err(NetError::HonestSender(a.clone())));
    assert_eq!(net.apply(&AdversaryAction::Flip(id, vec![0]), 0), Err(NetError::HonestSender(a.clone())));
    net.apply(&AdversaryAction::Delay(id, 3), 0).unwrap();
    assert_eq!(net.next_due(2), None);
    assert_eq!(net.next_due(3), Some(id));

    net.corrupted.insert(a.clone());
    let id2 = net.send(&a, &b, vec![7, 0, 0, 0, 1, 9], 3).unwrap();
    assert_eq!(net.observations[id2 as usize].plaintext.as_deref(), Some(&[7, 0, 0, 0, 1, 9][..]));
    net.apply(&AdversaryAction::Flip(id2, vec![0]), 3).unwrap();
    assert_eq!(net.packets[id2 as usize].bytes, vec![7, 0, 0, 0, 1, 8]);
    let copy = net.apply(&AdversaryAction::Replay(id2), 3).unwrap().unwrap();
    assert_eq!(net.packets[copy as usize].origin, Origin::Replay(id2));
    net.apply(&AdversaryAction::Drop(id), 3).unwrap();
    assert_eq!(net.apply(&AdversaryAction::Drop(id), 3), Err(NetError::NotPending(id)));
    assert_eq!(net.pending(), 2);
}

#[test]
fn parser_reports_line_numbers() {
    let err = parse_scenario("seed 1\n\nadvance 0\n").unwrap_err();
    assert_eq!(err.line, 3);
    assert_eq!(parse_scenario("bogus").unwrap_err().line, 1);
    assert_eq!(parse_scenario("session s a@b:c d@e:f q=1").unwrap_err().msg, "missing delta=");
    let sc = parse_scenario("on a@b:c request 2 flip 3.1\nexpect s1 executed <=3").unwrap();
    assert!(matches!(&sc.steps[0].2, Step::Rule(r) if r.nth == 2 && r.action == RuleAction::Flip(vec![3, 1])));
    assert!(matches!(&sc.steps[1].2, Step::Expect(Expectation::Count { cmp: Cmp::Le, value: 3, .. })));
}

#[test]
fn honest_session_runs_three_requests() {
    let r = run(HONEST);
    assert!(r.passed(), "{:?}", failures(&r));
    let s = &r.sessions[0];
    assert_eq!(s.responder_view.as_ref().unwrap().requests, 3);
    assert_eq!(s.initiator_view.as_ref().unwrap().cause, Status::Exhausted);
    assert!(r.packets.iter().all(|p| p.fate != Fate::Pending));
    // m0, m1, then two request/response pairs and the closing notice.
    assert_eq!(r.packets.len(), 7);
}

#[test]
fn replayed_handshake_is_pinned_on_the_initiator() {
    let r = run("
corrupt bob@y.com:cal
session s1 bob@y.com:cal alice@x.com:mail q=3 delta=50
run
replay 0
run
expect alice@x.com:mail rejected ReplayedNonce initiator
expect s1 fault ReplayedNonce initiator
expect s1 executed 1
");
    assert!(r.passed(), "{:?}", failures(&r));
    assert!(r.observations.iter().all(|o| o.plaintext.is_some()));
}

#[test]
fn honest_traffic_cannot_be_replayed() {
    let r = run("
session s1 bob@y.com:cal alice@x.com:mail q=2 delta=50
replay 0
flip 0 3
run
expect adversary refused 2
expect s1 status responder open
expect no-leaks
");
    assert!(r.passed(), "{:?}", failures(&r));
}

#[test]
fn mutation_by_corrupted_sender_is_attributed() {
    let r = run("
corrupt bob@y.com:cal
on bob@y.com:cal request 1 flip 3
session s1 bob@y.com:cal alice@x.com:mail q=3 delta=50
run
request s1 second
run
expect s1 fault BadTag initiator
expect s1 status responder aborted
expect s1 status initiator aborted
expect s1 executed 1
expect s1 audit BadTag initiator
");
    assert!(r.passed(), "{}", r.render());
}

#[test]
fn delay_past_expiry_ends_the_session() {
    let r = run("
session s1 bob@y.com:cal alice@x.com:mail q=3 delta=10
run
request s1 second
delay 2 11
advance 11
run
expect s1 executed 1
expect s1 status responder expired
");
    assert!(r.passed(), "{}", r.render());
}

#[test]
fn unauthorized_discovery_is_refused() {
    let r = run("
agent eve@z.com:spy receive * 1
session s1 alice@x.com:mail eve@z.com:spy q=1 delta=5
expect s1 error NotAuthorized
agent alice@x.com:mail send * 9
expect alice@x.com:mail error DuplicateAid
");
    assert!(r.passed(), "{:?}", failures(&r));
    assert!(r.packets.is_empty());
}

#[test]
fn csession_over_the_network() {
    let r = run("
agent orch@o.com:plan send * 10
agent r1@s.com:svc receive * 10
agent r2@t.com:svc receive * 10
rcp r1@s.com:svc * 10 100
rcp r2@t.com:svc * 10 100
csession c1 orch@o.com:plan static to=r1@s.com:svc,r2@t.com:svc m=2 n=3 delta=100
expect c1 tokens 6
expect c1 halted none
csession c2 orch@o.com:plan dynamic to=r1@s.com:svc,r2@t.com:svc m=2 n=2 delta=100 cap=3
expect c2 tokens <=3
expect c2 halted GlobalQuotaExhausted
");
    assert!(r.passed(), "{}", r.render());
    let (_, c1) = &r.csessions[0];
    assert!(c1.components.iter().all(|c| c.summary.as_ref().is_some_and(|s| s.cause == Status::Closed)));
}

#[test]
fn corrupted_responder_in_a_csession_is_isolated() {
    let r = run("
agent orch@o.com:plan send * 10
agent r1@s.com:svc receive * 10
agent r2@t.com:svc receive * 10
rcp r1@s.com:svc * 10 100
rcp r2@t.com:svc * 10 100
corrupt r1@s.com:svc
on r1@s.com:svc response 1 flip 3
csession c1 orch@o.com:plan static to=r1@s.com:svc,r2@t.com:svc m=2 n=3 delta=100
expect c1 tokens <=6
expect c1 halted none
");
    assert!(r.passed(), "{}", r.render());
    let (_, c1) = &r.csessions[0];
    let bad = c1.components[0].summary.as_ref().unwrap();
    assert_eq!((bad.cause, bad.fault, bad.accountable), (Status::Aborted, Some(Fault::BadTag), Some(Role::Responder)));
    assert_eq!(c1.components[1].summary.as_ref().unwrap().own_revealed, 3);
}

#[test]
fn same_seed_same_bytes() {
    let text = format!("{HEADER}{HONEST}");
    let a = run_scenario(&text, Path::new("."), None).unwrap();
    let b = run_scenario(&text, Path::new("."), None).unwrap();
    assert_eq!(a.to_log(), b.to_log());
    assert_eq!(a.render(), b.render());
    let c = run_scenario(&text, Path::new("."), Some(12)).unwrap();
    assert_ne!(a.to_log(), c.to_log());
}

#[test]
fn policy_files_resolve_against_the_scenario_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("alice.policy"), "receive * 4\nrcp alice@x.com:mail bob@y.com:cal 2 30\n").unwrap();
    std::fs::write(
        dir.path().join("s.scn"),
        "keys 4 5 4 4\npolicy alice@x.com:mail alice.policy\nagent bob@y.com:cal send * 4\n\
         session s1 bob@y.com:cal alice@x.com:mail q=5 delta=50\nrun\nrequest s1 x\nrun\nrequest s1 y\n\
         expect s1 executed 2\nexpect s1 error PeerBudgetExhausted\n",
    )
    .unwrap();
    let r = run_scenario_file(&dir.path().join("s.scn"), None).unwrap();
    assert!(r.passed(), "{}", r.render());
    assert!(matches!(run_scenario_file(&dir.path().join("missing.scn"), None), Err(RunError::Io { .. })));
}
