use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::wire::{parse_response, Request, Response};
use super::*;
use crate::crypto::SchemeId;
use crate::pki::CertificateAuthority;
use crate::policy::{ContactRule, Direction};

struct Setup {
    rng: ChaCha20Rng,
    ca: CertificateAuthority,
    provider: Provider,
}

fn cp(rules: &[(&str, &str, u32)]) -> ContactPolicy {
    ContactPolicy::new(rules.iter().map(|(d, p, b)| ContactRule::new(d.parse().unwrap(), p, *b).unwrap()).collect())
}

fn setup(seed: u64) -> Setup {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ca = CertificateAuthority::new(SchemeId::merkle_lamport(6), &mut rng).unwrap();
    let ta = SignatureKeyPair::generate(SchemeId::merkle_lamport(6), &mut rng).unwrap();
    let provider = Provider::new(ca.public_key().clone(), ta, b"provider-tls".to_vec(), seed);
    Setup { rng, ca, provider }
}

impl Setup {
    fn user(&mut self, uid: &str) -> User {
        let u = User::new(uid, "pw", SchemeId::merkle_lamport(4), &mut self.ca, &mut self.rng).unwrap();
        self.provider.register_user(uid, "pw", u.cert.clone()).unwrap();
        u
    }

    fn registration(&mut self, user: &mut User, aid: &str, port: u16, policy: ContactPolicy) -> AgentRegistration {
        let aid = Aid::parse(aid).unwrap();
        let tls = self.ca.issue(aid.as_str(), format!("tls-{aid}").as_bytes()).unwrap();
        let id = SignatureKeyPair::generate(SchemeId::merkle_lamport(1), &mut self.rng).unwrap();
        let ep = Endpoint { device: "dev".into(), ip: "10.0.0.1".into(), port };
        user.agent_registration(&aid, ep, policy, tls, id.public_key().clone(), self.provider.keys()).unwrap()
    }

    fn agent(&mut self, user: &mut User, aid: &str, port: u16, policy: ContactPolicy) -> Aid {
        let r = self.registration(user, aid, port, policy);
        let a = r.aid.clone();
        self.provider.register_agent(r).unwrap();
        a
    }
}

fn pair(s: &mut Setup, budget_r: u32, budget_i: u32) -> (Aid, Aid) {
    let mut alice = s.user("alice@x.com");
    let mut bob = s.user("bob@y.com");
    let r = s.agent(&mut alice, "alice@x.com:mail", 1, cp(&[("receive", "*", budget_r)]));
    let i = s.agent(&mut bob, "bob@y.com:cal", 2, cp(&[("send", "alice@x.com:mail", budget_i)]));
    (r, i)
}

#[test]
fn duplicate_uid_and_foreign_ca() {
    let mut s = setup(1);
    let u = s.user("alice@x.com");
    assert_eq!(s.provider.register_user("alice@x.com", "pw", u.cert.clone()), Err(ProviderError::DuplicateUid));
    let mut other = CertificateAuthority::new(SchemeId::merkle_lamport(1), &mut s.rng).unwrap();
    let forged = User::new("carol@z", "pw", SchemeId::merkle_lamport(1), &mut other, &mut s.rng).unwrap();
    assert_eq!(s.provider.register_user("carol@z", "pw", forged.cert), Err(ProviderError::BadCertificate));
}

#[test]
fn agent_registration_checks() {
    let mut s = setup(2);
    let mut alice = s.user("alice@x.com");
    let reg = s.registration(&mut alice, "alice@x.com:mail", 1, cp(&[]));
    let sig = s.provider.register_agent(reg.clone()).unwrap();
    let payload = registration_payload(&reg.aid, &reg.tls_cert, &reg.endpoint, &reg.identity_pk, &reg.sig_info);
    assert!(sig_verify(&s.provider.keys().ta_pk, &payload, &sig));
    assert_eq!(s.provider.register_agent(reg.clone()), Err(ProviderError::DuplicateAid));

    let mut dup_ep = s.registration(&mut alice, "alice@x.com:other", 1, cp(&[]));
    assert_eq!(s.provider.register_agent(dup_ep.clone()), Err(ProviderError::DuplicateEndpoint));

    // signature made over a different endpoint
    dup_ep.endpoint.port = 9;
    assert_eq!(s.provider.register_agent(dup_ep.clone()), Err(ProviderError::BadSignature));

    let mut wrong_pwd = s.registration(&mut alice, "alice@x.com:third", 3, cp(&[]));
    wrong_pwd.pwd = "nope".into();
    assert_eq!(s.provider.register_agent(wrong_pwd), Err(ProviderError::AuthFailed));
    assert!(s.provider.audit().is_empty());
}

#[test]
fn discover_decrements_min_budget() {
    let mut s = setup(3);
    let (r, i) = pair(&mut s, 10, 20);
    let tok = s.provider.discover(&i, &r).unwrap();
    assert_eq!(s.provider.counter(&r, &i), Some(9));
    assert!(verify_authorization(&tok, s.provider.ca(), s.provider.keys(), &r));
    assert!(!verify_authorization(&tok, s.provider.ca(), s.provider.keys(), &i));
    let mut moved = tok.clone();
    moved.responder.metadata.endpoint.port = 77;
    assert!(!verify_authorization(&moved, s.provider.ca(), s.provider.keys(), &r));
    let mut other_initiator = tok;
    other_initiator.initiator_aid = r.clone();
    assert!(!verify_authorization(&other_initiator, s.provider.ca(), s.provider.keys(), &r));
}

#[test]
fn budget_runs_out_after_b_grants() {
    let mut s = setup(4);
    let (r, i) = pair(&mut s, 10, 20);
    for _ in 0..10 {
        s.provider.discover(&i, &r).unwrap();
    }
    assert_eq!(s.provider.discover(&i, &r).unwrap_err(), ProviderError::BudgetExhausted);
    assert_eq!(s.provider.issued_nonces(), 10);
}

#[test]
fn no_rule_is_not_authorized_and_leaves_no_counter() {
    let mut s = setup(5);
    let (r, i) = pair(&mut s, 3, 3);
    assert_eq!(s.provider.discover(&r, &i).unwrap_err(), ProviderError::NotAuthorized);
    assert_eq!(s.provider.counter(&i, &r), None);
    let ghost = Aid::parse("ghost@x.com:a").unwrap();
    assert_eq!(s.provider.discover(&ghost, &r).unwrap_err(), ProviderError::UnknownAgent);
    assert_eq!(s.provider.discover(&i, &ghost).unwrap_err(), ProviderError::UnknownAgent);
}

#[test]
fn policy_update_applies_after_exhaustion() {
    let mut s = setup(6);
    let (r, i) = pair(&mut s, 1, 5);
    s.provider.discover(&i, &r).unwrap();
    assert_eq!(s.provider.update_policy("bob@y.com", "pw", &r, cp(&[])), Err(ProviderError::AuthFailed));
    let ghost = Aid::parse("alice@x.com:none").unwrap();
    assert_eq!(s.provider.update_policy("alice@x.com", "pw", &ghost, cp(&[])), Err(ProviderError::UnknownAgent));
    s.provider.update_policy("alice@x.com", "pw", &r, cp(&[("receive", "*", 3)])).unwrap();
    assert_eq!(s.provider.counter(&r, &i), None);
    s.provider.discover(&i, &r).unwrap();
    assert_eq!(s.provider.counter(&r, &i), Some(2));
}

#[test]
fn live_counter_survives_policy_update() {
    let mut s = setup(7);
    let (r, i) = pair(&mut s, 4, 5);
    s.provider.discover(&i, &r).unwrap();
    s.provider.update_policy("alice@x.com", "pw", &r, cp(&[("receive", "*", 50)])).unwrap();
    assert_eq!(s.provider.counter(&r, &i), Some(3));
}

#[test]
fn concurrent_discovery_never_overissues() {
    for budget in [1u32, 5, 10] {
        let mut s = setup(8 + u64::from(budget));
        let (r, i) = pair(&mut s, budget, 100);
        let provider = Arc::new(s.provider);
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (p, r, i) = (provider.clone(), r.clone(), i.clone());
                std::thread::spawn(move || {
                    let mut ok = 0u32;
                    for _ in 0..4 {
                        match p.discover(&i, &r) {
                            Ok(_) => ok += 1,
                            Err(e) => assert_eq!(e, ProviderError::BudgetExhausted),
                        }
                    }
                    ok
                })
            })
            .collect();
        let issued: u32 = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(issued, budget);
        assert_eq!(provider.issued_nonces(), budget as usize);
    }
}

#[test]
fn wire_roundtrip_and_channel_identity() {
    let mut s = setup(20);
    let (r, i) = pair(&mut s, 2, 2);
    let req = Request::Discover { initiator: i.clone(), responder: r.clone() };
    let frame = req.to_frame();
    assert_eq!(Request::from_frame(&frame).unwrap(), req);
    let resp = parse_response(&s.provider.handle_frame(i.as_str(), &frame)).unwrap();
    assert!(matches!(resp, Ok(Response::Authorized(_))));
    let spoofed = parse_response(&s.provider.handle_frame(r.as_str(), &frame)).unwrap();
    assert_eq!(spoofed, Err(ProviderError::AuthFailed));
    let junk = parse_response(&s.provider.handle_frame("x", &[9, 1, 2])).unwrap();
    assert_eq!(junk, Err(ProviderError::Malformed));
}

#[test]
fn restart_from_log_restores_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.log");
    let build = |seed: u64| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ca = CertificateAuthority::new(SchemeId::merkle_lamport(6), &mut rng).unwrap();
        let ta = SignatureKeyPair::generate(SchemeId::merkle_lamport(6), &mut rng).unwrap();
        (rng, ca, ta)
    };
    let (rng, ca, ta) = build(30);
    let provider = Provider::new(ca.public_key().clone(), ta, b"tls".to_vec(), 30).with_log(&path).unwrap();
    let mut s = Setup { rng, ca, provider };
    let (r, i) = pair(&mut s, 3, 3);
    s.provider.discover(&i, &r).unwrap();
    s.provider.update_policy("alice@x.com", "pw", &r, cp(&[("receive", "*", 9)])).unwrap();
    let before = s.provider.state_digest();
    let used = s.provider.signatures_remaining();
    drop(s);

    let (_, ca, ta) = build(30);
    let restarted = Provider::new(ca.public_key().clone(), ta, b"tls".to_vec(), 30).with_log(&path).unwrap();
    assert_eq!(restarted.state_digest(), before);
    assert_eq!(restarted.signatures_remaining(), used);
    assert_eq!(restarted.counter(&r, &i), Some(2));
    let tok = restarted.discover(&i, &r).unwrap();
    assert!(verify_authorization(&tok, restarted.ca(), restarted.keys(), &r));
    assert_eq!(restarted.issued_nonces(), 2);
}

#[test]
fn direction_matters_for_budget() {
    let p = cp(&[("send", "*", 4)]);
    assert!(p.match_rule(Direction::Receive, &Aid::parse("a@b:c").unwrap()).is_none());
}
