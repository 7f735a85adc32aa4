//! Merkle commitments with membership proofs.

use agentgov::crypto::{hash, merkle_verify, Digest, MerkleTree};

fn main() {
    for size in [1usize, 2, 5, 16] {
        let leaves: Vec<Digest> = (0..size as u64).map(|i| hash(&i.to_be_bytes())).collect();
        let tree = MerkleTree::build(&leaves).expect("non-empty");
        for (i, leaf) in leaves.iter().enumerate() {
            let proof = tree.prove(i).unwrap();
            assert!(merkle_verify(&tree.root(), leaf, &proof));
            assert!(!merkle_verify(&tree.root(), &hash(b"not a member"), &proof));
        }
        println!("{size:>2} leaves  root {}  proof length {}", &tree.root().to_hex()[..16], tree.prove(0).unwrap().len());
    }
    assert!(MerkleTree::build(&[]).is_err());
}
