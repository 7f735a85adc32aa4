//! User-side commitments to chain terminals and the signing hook.

use std::collections::HashSet;

use crate::crypto::{
    merkle_verify, sig_verify, Digest, LamportPublicKey, MerkleProof, OtsSignature, PublicKey, Signature,
};
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::pki::signing_payload;
use crate::provider::User;

use super::Fault;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApprovalKind {
    /// Initiator chain terminal.
    Icp,
    /// Responder chain terminal.
    Rcp,
    /// Merkle root over initiator chain terminals.
    IcpRoot,
    /// Merkle root over delegated one-time keys.
    IcpOtsRoot,
}

impl ApprovalKind {
    fn label(self) -> &'static str {
        match self {
            ApprovalKind::Icp => "icp-chain",
            ApprovalKind::Rcp => "rcp-chain",
            ApprovalKind::IcpRoot => "icp-root",
            ApprovalKind::IcpOtsRoot => "icp-ots-root",
        }
    }
}

pub fn commitment_payload(kind: ApprovalKind, value: &Digest, budget: u64) -> Vec<u8> {
    signing_payload(kind.label(), |e| {
        e.value(value).u64(budget);
    })
}

/// Payload a delegated one-time key signs: the terminal and length of one
/// chain.
pub fn ots_chain_payload(terminal: &Digest, n: u64) -> Vec<u8> {
    signing_payload("ots-chain", |e| {
        e.value(terminal).u64(n);
    })
}

/// What the agent asks its user to sign.
#[derive(Debug, Clone)]
pub struct Approval {
    pub kind: ApprovalKind,
    pub value: Digest,
    pub budget: u64,
}

impl Approval {
    pub fn payload(&self) -> Vec<u8> {
        commitment_payload(self.kind, &self.value, self.budget)
    }
}

/// The boundary to user-authorized signing software. Returning `None`
/// refuses.
pub trait UserSigner {
    fn approve(&mut self, req: &Approval) -> Option<Signature>;
}

impl UserSigner for User {
    fn approve(&mut self, req: &Approval) -> Option<Signature> {
        self.sign(&req.payload()).ok()
    }
}

/// A user who declines everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct Refuse;

impl UserSigner for Refuse {
    fn approve(&mut self, _: &Approval) -> Option<Signature> {
        None
    }
}

/// How a chain terminal is vouched for by its owner's user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainCommitment {
    /// User signature over `(terminal, n)`.
    Direct { sig: Signature },
    /// User signature over `(root, n)` plus the terminal's membership proof.
    Merkle { root: Digest, root_sig: Signature, proof: MerkleProof },
    /// User signature over `(root, n)` where the tree's leaves are one-time
    /// public keys; one of them signs the terminal.
    Delegated {
        root: Digest,
        root_sig: Signature,
        ots_pk: LamportPublicKey,
        ots_sig: OtsSignature,
        proof: MerkleProof,
    },
}

/// Verifier-side memory that outlives single sessions.
#[derive(Debug, Default, Clone)]
pub struct ReplayGuard {
    pub nonces: HashSet<[u8; 16]>,
    pub ots_keys: HashSet<Digest>,
    pub terminals: HashSet<Digest>,
}

impl ChainCommitment {
    /// Root this commitment hangs off, if any.
    pub fn root(&self) -> Option<Digest> {
        match self {
            ChainCommitment::Direct { .. } => None,
            ChainCommitment::Merkle { root, .. } | ChainCommitment::Delegated { root, .. } => Some(*root),
        }
    }

    /// Checks that `terminal` of a length-`n` chain is committed under
    /// `user_pk`. Does not record anything; see [`ChainCommitment::record`].
    pub fn verify(
        &self,
        kind: ApprovalKind,
        user_pk: &PublicKey,
        terminal: &Digest,
        n: u64,
        guard: &ReplayGuard,
    ) -> Result<(), Fault> {
        if guard.terminals.contains(terminal) {
            return Err(Fault::ReusedChain);
        }
        match self {
            ChainCommitment::Direct { sig } => {
                if !sig_verify(user_pk, &commitment_payload(kind, terminal, n), sig) {
                    return Err(Fault::BadUserSig);
                }
            }
            ChainCommitment::Merkle { root, root_sig, proof } => {
                if kind != ApprovalKind::Icp
                    || !sig_verify(user_pk, &commitment_payload(ApprovalKind::IcpRoot, root, n), root_sig)
                {
                    return Err(Fault::BadUserSig);
                }
                if !merkle_verify(root, terminal, proof) {
                    return Err(Fault::BadProof);
                }
            }
            ChainCommitment::Delegated { root, root_sig, ots_pk, ots_sig, proof } => {
                if kind != ApprovalKind::Icp
                    || !sig_verify(user_pk, &commitment_payload(ApprovalKind::IcpOtsRoot, root, n), root_sig)
                {
                    return Err(Fault::BadUserSig);
                }
                let pk_digest = ots_pk.digest();
                if !merkle_verify(root, &pk_digest, proof) {
                    return Err(Fault::BadProof);
                }
                if guard.ots_keys.contains(&pk_digest) {
                    return Err(Fault::ReusedOtsKey);
                }
                if !ots_pk.verify(&ots_chain_payload(terminal, n), ots_sig) {
                    return Err(Fault::BadUserSig);
                }
            }
        }
        Ok(())
    }

    /// Remembers the terminal (and delegated key) once the commitment has
    /// been accepted.
    pub fn record(&self, terminal: &Digest, guard: &mut ReplayGuard) {
        guard.terminals.insert(*terminal);
        if let ChainCommitment::Delegated { ots_pk, .. } = self {
            guard.ots_keys.insert(ots_pk.digest());
        }
    }
}

impl Encode for ChainCommitment {
    fn encode_fields(&self, enc: &mut Encoder) {
        match self {
            ChainCommitment::Direct { sig } => {
                enc.u64(0).value(sig);
            }
            ChainCommitment::Merkle { root, root_sig, proof } => {
                enc.u64(1).value(root).value(root_sig).value(proof);
            }
            ChainCommitment::Delegated { root, root_sig, ots_pk, ots_sig, proof } => {
                enc.u64(2).value(root).value(root_sig).value(ots_pk).value(ots_sig).value(proof);
            }
        }
    }
}

impl Decode for ChainCommitment {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u64()? {
            0 => ChainCommitment::Direct { sig: dec.value()? },
            1 => ChainCommitment::Merkle { root: dec.value()?, root_sig: dec.value()?, proof: dec.value()? },
            2 => ChainCommitment::Delegated {
                root: dec.value()?,
                root_sig: dec.value()?,
                ots_pk: dec.value()?,
                ots_sig: dec.value()?,
                proof: dec.value()?,
            },
            _ => return Err(DecodeError::Invalid("commitment kind")),
        })
    }
}
