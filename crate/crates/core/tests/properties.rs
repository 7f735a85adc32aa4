use std::path::Path;

use agentgov::crypto::{hash, merkle_verify, ChainCursor, ChainSeedKey, HashChain, MerkleTree};
use agentgov::encoding::{flip_field, split_fields, Encoder};
use agentgov::eval::models::{proto_overhead, Exact, ProtoInput};
use agentgov::netsim::run_scenario;
use agentgov::policy::{Aid, Direction};
use agentgov::testbed::contact_policy;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chain_opens_top_down_exactly_once(key in any::<[u8; 32]>(), sid in prop::collection::vec(any::<u8>(), 1..40), n in 1u64..24) {
        let chain = HashChain::build(&ChainSeedKey::from_bytes(key), &sid, "a@x.com:m", "b@y.com:n", 0, n).unwrap();
        let mut cur = ChainCursor::at_terminal(chain.terminal(), n);
        for i in (0..n).rev() {
            let tok = chain.token(i).unwrap();
            prop_assert!(cur.accept(&tok, &sid, "b@y.com:n"));
            prop_assert!(!cur.accept(&tok, &sid, "b@y.com:n"));
        }
        prop_assert_eq!(cur.remaining(), 0);
    }

    #[test]
    fn merkle_proofs_verify_only_their_leaf(size in 1usize..40, pick in any::<prop::sample::Index>(), other in any::<prop::sample::Index>()) {
        let leaves: Vec<_> = (0..size as u64).map(|i| hash(&i.to_le_bytes())).collect();
        let tree = MerkleTree::build(&leaves).unwrap();
        let (i, j) = (pick.index(size), other.index(size));
        let proof = tree.prove(i).unwrap();
        prop_assert!(merkle_verify(&tree.root(), &leaves[i], &proof));
        if leaves[i] != leaves[j] {
            prop_assert!(!merkle_verify(&tree.root(), &leaves[j], &proof));
        }
    }

    #[test]
    fn flipping_any_field_changes_only_that_field(fields in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..12), 1..8), pick in any::<prop::sample::Index>()) {
        let mut enc = Encoder::new();
        for f in &fields {
            enc.bytes(f);
        }
        let bytes = enc.finish();
        let k = pick.index(fields.len());
        let flipped = flip_field(&bytes, &[k]).unwrap();
        let parts = split_fields(&flipped).unwrap();
        prop_assert_eq!(parts.len(), fields.len());
        for (idx, (a, b)) in parts.iter().zip(&fields).enumerate() {
            prop_assert_eq!(idx == k, *a != b.as_slice());
        }
    }

    #[test]
    fn proto_cost_is_cycles_times_round(m in 1u64..5000, q in 1u64..50, rtt in 0i64..400) {
        let t = Exact::new(2033, 100);
        let rtt = Exact::from_integer(rtt.into());
        let c = proto_overhead(&ProtoInput { m, q_max: q, rtt, t_crypto: t }).unwrap();
        prop_assert_eq!(c.cycles, m.div_ceil(q));
        prop_assert_eq!(&c.total, &((rtt + t) * Exact::from_integer(c.cycles.into())));
        prop_assert_eq!(c.amortized * Exact::from_integer(m.into()), c.total);
    }

    #[test]
    fn most_specific_rule_wins(g in 0u32..9, d in 0u32..9, e in 0u32..9) {
        let cp = contact_policy(&[("receive", "*", g), ("receive", "*@y.com:cal", d), ("receive", "bob@y.com:cal", e)]).unwrap();
        let pick = |s: &str| cp.match_rule(Direction::Receive, &Aid::parse(s).unwrap()).unwrap().budget;
        prop_assert_eq!(pick("bob@y.com:cal"), e);
        prop_assert_eq!(pick("ann@y.com:cal"), d);
        prop_assert_eq!(pick("bob@y.com:mail"), g);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Whatever the network does to honest traffic, nobody executes or
    /// reveals more than the negotiated budget.
    #[test]
    fn scheduling_never_breaks_the_budget(q in 1u64..4, ops in prop::collection::vec((0u8..3, 0u64..12, 1u64..6), 0..6)) {
        let mut text = format!(
            "seed 3\nkeys 4 5 4 4\nagent a@x.com:m receive * 9\nagent b@y.com:n send * 9\nrcp a@x.com:m * {q} 20\n\
             session s1 b@y.com:n a@x.com:m q={q} delta=20\n"
        );
        for (op, pkt, k) in &ops {
            match op {
                0 => text.push_str(&format!("drop {pkt}\n")),
                1 => text.push_str(&format!("delay {pkt} {k}\n")),
                _ => text.push_str(&format!("advance {k}\n")),
            }
        }
        for r in 1..=q + 1 {
            text.push_str(&format!("run\nrequest s1 r{r}\n"));
        }
        text.push_str(&format!("run\nexpect s1 executed <={q}\nexpect s1 revealed <={q}\nexpect no-leaks\n"));
        let report = run_scenario(&text, Path::new("."), None).unwrap();
        prop_assert!(report.passed(), "{}", report.render());
    }
}
