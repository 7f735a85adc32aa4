//! A personalized hash chain: commit to the terminal, then spend tokens
//! from the top down. Tokens are bound to one session and one peer.

use agentgov::crypto::{ChainCursor, ChainSeedKey, HashChain};

fn main() {
    let key = ChainSeedKey::from_bytes([42; 32]);
    let (sid, me, peer) = (b"session-1".as_slice(), "bob@y.com:cal", "alice@x.com:mail");
    let n = 5;
    let chain = HashChain::build(&key, sid, me, peer, 0, n).expect("n > 0");
    println!("terminal {}", chain.terminal().to_hex());

    let mut cursor = ChainCursor::at_terminal(chain.terminal(), n);
    for index in (0..n).rev() {
        let tok = chain.token(index).expect("index < n");
        assert!(cursor.accept(&tok, sid, peer));
        println!("token {index} accepted, {} left", cursor.remaining());
    }

    // the same chain cannot be spent against another session or peer
    let other = HashChain::build(&key, b"session-2", me, peer, 0, n).unwrap();
    let mut fresh = ChainCursor::at_terminal(chain.terminal(), n);
    assert!(!fresh.accept(&other.token(n - 1).unwrap(), sid, peer));
    assert!(!fresh.accept(&chain.token(n - 1).unwrap(), sid, "mallory@m.com:x"));
    // and tokens must come in order
    assert!(!fresh.accept(&chain.token(n - 2).unwrap(), sid, peer));
    println!("cross-session, cross-peer and out-of-order tokens refused");
}
