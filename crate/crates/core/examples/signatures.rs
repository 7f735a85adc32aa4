//! Lamport one-time keys and the stateful many-time scheme built on them.

use agentgov::crypto::{sig_verify, CryptoError, OtsKeyPair, SchemeId, SignatureKeyPair};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);

    let mut ots = OtsKeyPair::generate(&mut rng);
    let sig = ots.sign(b"once").unwrap();
    assert!(ots.public_key().verify(b"once", &sig));
    assert_eq!(ots.sign(b"twice").unwrap_err(), CryptoError::KeyReuse);
    println!("one-time key refuses a second signature");

    let mut key = SignatureKeyPair::generate(SchemeId::merkle_lamport(4), &mut rng).unwrap();
    let mut signed = 0;
    while let Ok(sig) = key.sign(format!("message {signed}").as_bytes()) {
        assert!(sig_verify(key.public_key(), format!("message {signed}").as_bytes(), &sig));
        signed += 1;
    }
    println!("height-4 key signed {signed} messages, then: {}", key.sign(b"more").unwrap_err());
    assert_eq!(signed, 16);
}
