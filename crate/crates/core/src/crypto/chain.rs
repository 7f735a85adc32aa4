//! Personalized hash chains used as message-count tokens.
//!
//! Link `j` of a chain is `H(link[j-1] ‖ j ‖ sid ‖ peer_aid)`, so every link
//! is bound to its position, its session and the peer that will verify it.
//! Tokens are opened from the top down: the terminal `link[n]` is committed,
//! then `link[n-1]`, `link[n-2]`, ... `link[0]` are revealed one per message.

use super::hash::{hash_encoded, prf, ChainSeedKey, Digest};
use super::CryptoError;
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};

pub fn link_step(prev: &Digest, position: u64, sid: &[u8], peer_aid: &str) -> Digest {
    let mut enc = Encoder::new();
    enc.bytes(prev.as_bytes()).u64(position).bytes(sid).str(peer_aid);
    hash_encoded(enc)
}

#[derive(Debug, Clone)]
pub struct HashChain {
    sid: Vec<u8>,
    peer_aid: String,
    addr: u64,
    len: u64,
    terminal: Digest,
    /// `links[j]` for `j <= retained`; revealed links above are dropped.
    links: Vec<Digest>,
}

impl HashChain {
    pub fn build(
        key: &ChainSeedKey,
        sid: &[u8],
        self_aid: &str,
        peer_aid: &str,
        addr: u64,
        n: u64,
    ) -> Result<Self, CryptoError> {
        let seed = prf(key, sid, self_aid, peer_aid, addr);
        Self::from_seed(seed, sid, peer_aid, addr, n)
    }

    pub fn from_seed(seed: Digest, sid: &[u8], peer_aid: &str, addr: u64, n: u64) -> Result<Self, CryptoError> {
        if n == 0 {
            return Err(CryptoError::ZeroLength);
        }
        let mut links = Vec::with_capacity(n as usize + 1);
        links.push(seed);
        for j in 1..=n {
            let next = link_step(&links[(j - 1) as usize], j, sid, peer_aid);
            links.push(next);
        }
        Ok(HashChain {
            sid: sid.to_vec(),
            peer_aid: peer_aid.to_string(),
            addr,
            len: n,
            terminal: links[n as usize],
            links,
        })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn addr(&self) -> u64 {
        self.addr
    }

    pub fn sid(&self) -> &[u8] {
        &self.sid
    }

    pub fn peer_aid(&self) -> &str {
        &self.peer_aid
    }

    pub fn terminal(&self) -> Digest {
        self.terminal
    }

    pub fn seed(&self) -> Digest {
        self.links[0]
    }

    /// The link at `index`, if it is still retained.
    pub fn link(&self, index: u64) -> Option<Digest> {
        self.links.get(index as usize).copied()
    }

    /// Highest index whose preimage is still held.
    pub fn retained_top(&self) -> Option<u64> {
        self.links.len().checked_sub(1).map(|i| i as u64)
    }

    /// Drops every link above `index`.
    pub fn forget_above(&mut self, index: u64) {
        self.links.truncate(index as usize + 1);
    }

    /// The token opening position `index`. At the first opening
    /// (`index == n - 1`) the terminal travels alongside.
    pub fn token(&self, index: u64) -> Option<NextTok> {
        let value = self.link(index)?;
        let terminal = (index + 1 == self.len).then_some(self.terminal);
        Some(NextTok { index, value, terminal })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextTok {
    pub index: u64,
    pub value: Digest,
    pub terminal: Option<Digest>,
}

impl Encode for NextTok {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.u64(self.index).value(&self.value).option(self.terminal.as_ref());
    }
}

impl Decode for NextTok {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(NextTok { index: dec.u64()?, value: dec.value()?, terminal: dec.option()? })
    }
}

/// True iff `tok` is the preimage of `expected` one position down.
pub fn verify_step(expected: &Digest, tok: &NextTok, sid: &[u8], peer_aid: &str) -> bool {
    let Some(pos) = tok.index.checked_add(1) else {
        return false;
    };
    link_step(&tok.value, pos, sid, peer_aid) == *expected
}

/// Closure check for the last token of a chain: the revealed seed must hash
/// to the previously accepted link at position 1. The seed PRF key is private
/// to the chain owner, so this is the strongest check a counterparty can make.
pub fn verify_seed_closure(link1: &Digest, seed: &Digest, sid: &[u8], peer_aid: &str) -> bool {
    link_step(seed, 1, sid, peer_aid) == *link1
}

/// Full seed check for a holder of the seed key.
pub fn verify_seed_with_key(
    key: &ChainSeedKey,
    seed: &Digest,
    sid: &[u8],
    owner_aid: &str,
    peer_aid: &str,
    addr: u64,
) -> bool {
    prf(key, sid, owner_aid, peer_aid, addr) == *seed
}

/// Receiving-side cursor over a peer's chain: tracks the last accepted link
/// and its index, and accepts only the immediate preimage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainCursor {
    pub head: Digest,
    pub head_index: u64,
}

impl ChainCursor {
    /// Starts from a committed terminal of a length-`n` chain.
    pub fn at_terminal(terminal: Digest, n: u64) -> Self {
        ChainCursor { head: terminal, head_index: n }
    }

    pub fn remaining(&self) -> u64 {
        self.head_index
    }

    pub fn accept(&mut self, tok: &NextTok, sid: &[u8], peer_aid: &str) -> bool {
        if self.head_index == 0 || tok.index + 1 != self.head_index {
            return false;
        }
        if !verify_step(&self.head, tok, sid, peer_aid) {
            return false;
        }
        self.head = tok.value;
        self.head_index = tok.index;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: u64, peer: &str) -> HashChain {
        HashChain::build(&ChainSeedKey::from_bytes([1; 32]), b"sid-1", "a@d:x", peer, 0, n).unwrap()
    }

    #[test]
    fn zero_length_is_rejected() {
        let k = ChainSeedKey::from_bytes([1; 32]);
        assert_eq!(HashChain::build(&k, b"s", "a", "b", 0, 0).unwrap_err(), CryptoError::ZeroLength);
    }

    #[test]
    fn single_link_chain_unrolls() {
        let c = chain(1, "b@d:y");
        assert_eq!(c.terminal(), link_step(&c.seed(), 1, b"sid-1", "b@d:y"));
        let t = c.token(0).unwrap();
        assert_eq!(t.terminal, Some(c.terminal()));
    }

    #[test]
    fn peer_binding_changes_every_link_above_seed() {
        let a = chain(4, "b@d:y");
        let b = chain(4, "c@d:z");
        assert_eq!(a.seed(), HashChain::from_seed(a.seed(), b"sid-1", "c@d:z", 0, 4).unwrap().seed());
        let b2 = HashChain::from_seed(a.seed(), b"sid-1", "c@d:z", 0, 4).unwrap();
        for j in 1..=4 {
            assert_ne!(a.link(j), b2.link(j));
        }
        assert_ne!(a.terminal(), b.terminal());
    }

    #[test]
    fn cursor_consumes_in_order_and_rejects_repeats() {
        let c = chain(3, "b@d:y");
        let mut cur = ChainCursor::at_terminal(c.terminal(), 3);
        for i in (0..3).rev() {
            let t = c.token(i).unwrap();
            assert!(cur.accept(&t, b"sid-1", "b@d:y"));
            assert!(!cur.accept(&t, b"sid-1", "b@d:y"));
        }
        assert_eq!(cur.remaining(), 0);
        assert!(verify_seed_closure(&c.link(1).unwrap(), &c.seed(), b"sid-1", "b@d:y"));
    }

    #[test]
    fn forgetting_drops_revealed_links() {
        let mut c = chain(4, "b@d:y");
        c.forget_above(2);
        assert_eq!(c.retained_top(), Some(2));
        assert!(c.link(3).is_none());
        assert!(c.token(3).is_none());
        assert_eq!(c.terminal(), chain(4, "b@d:y").terminal());
    }
}
