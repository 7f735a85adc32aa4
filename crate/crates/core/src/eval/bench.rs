//! Micro-benchmarks of the primitives. Timings are local measurements and
//! carry no meaning beyond the machine they ran on.

use std::hint::black_box;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::crypto::{hash, hmac, link_step, sig_verify, Digest, MerkleTree, SchemeId, SignatureKeyPair};

pub const OPS: [&str; 6] = ["chain_step", "hmac", "sign", "verify", "merkle_build", "merkle_prove"];

/// Leaves in the tree used by the Merkle rows.
pub const MERKLE_LEAVES: usize = 64;

const MAX_SIGN_HEIGHT: u8 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct OpStats {
    pub op: &'static str,
    pub mean_us: f64,
    pub p99_us: f64,
    pub samples: usize,
}

fn stats(op: &'static str, mut samples: Vec<f64>) -> OpStats {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let idx = ((n as f64 * 0.99).ceil() as usize).clamp(1, n) - 1;
    OpStats { op, mean_us: mean, p99_us: samples[idx], samples: n }
}

fn time<T>(f: impl FnOnce() -> T) -> f64 {
    let t = Instant::now();
    black_box(f());
    t.elapsed().as_secs_f64() * 1e6
}

fn height_for(iters: usize) -> u8 {
    let mut h = 0u8;
    while (1usize << h) < iters && h < MAX_SIGN_HEIGHT {
        h += 1;
    }
    h
}

/// Times each op `iters` times (at least once). Key generation for the
/// signing rows is not timed.
pub fn bench_primitives(iters: usize) -> Vec<OpStats> {
    let iters = iters.max(1);
    let mut rng = ChaCha20Rng::seed_from_u64(0xbe7c);
    let sid = hash(b"bench-sid");
    let key = [7u8; 32];
    let msg = b"bench message of a typical request size".to_vec();
    let leaves: Vec<Digest> = (0..MERKLE_LEAVES as u64).map(|i| hash(&i.to_be_bytes())).collect();
    let tree = MerkleTree::build(&leaves).expect("non-empty");

    let mut out = Vec::new();
    let mut prev = hash(b"seed");
    out.push(stats(
        "chain_step",
        (0..iters as u64)
            .map(|i| {
                let mut next = prev;
                let t = time(|| next = link_step(&prev, i + 1, sid.as_bytes(), "peer@bench:x"));
                prev = next;
                t
            })
            .collect(),
    ));
    out.push(stats("hmac", (0..iters).map(|_| time(|| hmac(&key, &msg))).collect()));

    let scheme = SchemeId::merkle_lamport(height_for(iters));
    let mut sk = SignatureKeyPair::generate(scheme, &mut rng).expect("keygen");
    let mut signed = Vec::with_capacity(iters);
    let mut sign_t = Vec::with_capacity(iters);
    for _ in 0..iters {
        if sk.uses_remaining() == 0 {
            sk = SignatureKeyPair::generate(scheme, &mut rng).expect("keygen");
        }
        let mut sig = None;
        sign_t.push(time(|| sig = Some(sk.sign(&msg).expect("capacity checked"))));
        signed.push((sk.public_key().clone(), sig.expect("set above")));
    }
    out.push(stats("sign", sign_t));
    out.push(stats(
        "verify",
        signed
            .iter()
            .map(|(pk, sig)| {
                let mut ok = false;
                let t = time(|| ok = sig_verify(pk, &msg, sig));
                assert!(ok, "benchmark signature must verify");
                t
            })
            .collect(),
    ));
    out.push(stats("merkle_build", (0..iters).map(|_| time(|| MerkleTree::build(&leaves))).collect()));
    out.push(stats("merkle_prove", (0..iters).map(|i| time(|| tree.prove(i % MERKLE_LEAVES))).collect()));
    out
}

pub fn bench_csv(rows: &[OpStats]) -> String {
    let mut s = String::from("op,mean_us,p99_us,note\n");
    for r in rows {
        s.push_str(&format!("{},{:.3},{:.3},measured locally n={}\n", r.op, r.mean_us, r.p99_us, r.samples));
    }
    s
}
