//! Ideal channels: the network learns lengths and timing of honest traffic
//! and can only reorder, delay or drop it. Content is exposed, and can be
//! forged, only where the adversary holds an endpoint.

use agentgov::netsim::{AdversaryAction, Network, SimClock};
use agentgov::policy::Aid;

fn main() {
    let clock = SimClock::new();
    let mut net = Network::new();
    let a = Aid::parse("a@x.com:m").unwrap();
    let b = Aid::parse("b@y.com:n").unwrap();
    net.directory.register(a.as_str(), b"pk-a".to_vec());
    net.directory.register(b.as_str(), b"pk-b".to_vec());

    let id = net.send(&a, &b, b"hello".to_vec(), clock.read()).unwrap();
    let o = &net.observations[0];
    println!("adversary saw {} -> {}, {} octets, plaintext {:?}", o.from, o.to, o.len, o.plaintext);
    println!("replay: {}", net.apply(&AdversaryAction::Replay(id), clock.read()).unwrap_err());
    net.apply(&AdversaryAction::Delay(id, 3), clock.read()).unwrap();
    assert_eq!(net.recv(&a, &b, clock.read()), None);
    clock.advance(3).unwrap();
    assert_eq!(net.recv(&a, &b, clock.read()).as_deref(), Some(&b"hello"[..]));

    net.corrupted.insert(a.clone());
    net.send(&a, &b, b"secret".to_vec(), clock.read()).unwrap();
    println!("with a corrupted: {:?}", net.observations[1].plaintext.as_deref().map(String::from_utf8_lossy));
}
