//! Binary Merkle tree with 0x00/0x01 leaf/node domain separation. An odd
//! node at any level is paired with a copy of itself.

use sha2::{Digest as _, Sha256};

use super::hash::Digest;
use super::CryptoError;
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

pub fn leaf_hash(leaf: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update(leaf.as_bytes());
    Digest(h.finalize().into())
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE_PREFIX]);
    h.update(left.as_bytes());
    h.update(right.as_bytes());
    Digest(h.finalize().into())
}

#[derive(Debug, Clone)]
pub struct MerkleTree {
    leaves: Vec<Digest>,
    /// `levels[0]` are the hashed leaves, the last level holds only the root.
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn build(leaves: &[Digest]) -> Result<Self, CryptoError> {
        if leaves.is_empty() {
            return Err(CryptoError::EmptyLeaves);
        }
        let mut levels = vec![leaves.iter().map(leaf_hash).collect::<Vec<_>>()];
        while levels.last().unwrap().len() > 1 {
            let cur = levels.last().unwrap();
            let next = cur
                .chunks(2)
                .map(|pair| node_hash(&pair[0], pair.get(1).unwrap_or(&pair[0])))
                .collect();
            levels.push(next);
        }
        Ok(MerkleTree { leaves: leaves.to_vec(), levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().unwrap()[0]
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn prove(&self, index: usize) -> Result<MerkleProof, CryptoError> {
        if index >= self.leaves.len() {
            return Err(CryptoError::IndexOutOfRange { index, len: self.leaves.len() });
        }
        let mut siblings = Vec::with_capacity(self.levels.len() - 1);
        let mut i = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let (sib, side) = if i.is_multiple_of(2) {
                (*level.get(i + 1).unwrap_or(&level[i]), Side::Right)
            } else {
                (level[i - 1], Side::Left)
            };
            siblings.push((sib, side));
            i /= 2;
        }
        Ok(MerkleProof { leaf_index: index as u64, siblings })
    }
}

/// Which side of the path node the sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleProof {
    pub leaf_index: u64,
    pub siblings: Vec<(Digest, Side)>,
}

impl MerkleProof {
    pub fn len(&self) -> usize {
        self.siblings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.siblings.is_empty()
    }

    /// Root implied by `leaf` along this path, or `None` when the side flags
    /// disagree with the claimed leaf index.
    pub fn implied_root(&self, leaf: &Digest) -> Option<Digest> {
        if self.siblings.len() < 64 && self.leaf_index >> self.siblings.len() != 0 {
            return None;
        }
        let mut acc = leaf_hash(leaf);
        for (level, (sib, side)) in self.siblings.iter().enumerate() {
            let is_right_child = (self.leaf_index >> level) & 1 == 1;
            match (side, is_right_child) {
                (Side::Left, true) => acc = node_hash(sib, &acc),
                (Side::Right, false) => acc = node_hash(&acc, sib),
                _ => return None,
            }
        }
        Some(acc)
    }
}

pub fn merkle_verify(root: &Digest, leaf: &Digest, proof: &MerkleProof) -> bool {
    proof.implied_root(leaf).is_some_and(|r| r == *root)
}

impl Encode for MerkleProof {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.u64(self.leaf_index);
        enc.nested(|e| {
            for (d, side) in &self.siblings {
                e.nested(|s| {
                    s.bytes(d.as_bytes()).bool(*side == Side::Right);
                });
            }
        });
    }
}

impl Decode for MerkleProof {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let leaf_index = dec.u64()?;
        let siblings = dec.nested(|d| {
            let mut out = Vec::new();
            while !d.is_empty() {
                out.push(d.nested(|s| {
                    let digest = Digest(s.fixed()?);
                    let side = if s.bool()? { Side::Right } else { Side::Left };
                    Ok((digest, side))
                })?);
            }
            Ok(out)
        })?;
        Ok(MerkleProof { leaf_index, siblings })
    }
}
