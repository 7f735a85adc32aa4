//! Registration and discovery against the Provider, with per-pair budgets.

use agentgov::testbed::{contact_policy, KeyHeights, Phase, Testbed};

fn main() {
    let mut tb = Testbed::new(3, KeyHeights { ca: 4, provider: 6, user: 4, agent: 3 }).unwrap();
    let alice = tb.add_agent("alice@x.com:mail", contact_policy(&[("receive", "*", 2)]).unwrap()).unwrap();
    let bob = tb.add_agent("bob@y.com:cal", contact_policy(&[("send", "*", 9)]).unwrap()).unwrap();
    let eve = tb.add_agent("eve@z.com:spy", contact_policy(&[("receive", "nobody@n.com:x", 9)]).unwrap()).unwrap();

    for k in 1..=3 {
        match tb.grant(&bob, &alice) {
            Ok(tok) => println!("grant {k}: authorized, nonce {}", &hex::encode(tok.nonce)[..12]),
            Err(e) => println!("grant {k}: {e}"),
        }
    }
    assert_eq!(tb.provider.counter(&alice, &bob), Some(0));
    println!("bob -> eve: {}", tb.grant(&bob, &eve).unwrap_err());
    println!("alice again: {}", tb.add_agent("alice@x.com:mail", contact_policy(&[]).unwrap()).unwrap_err());

    for phase in [Phase::UserRegistration, Phase::AgentRegistration, Phase::Discovery] {
        let bytes: usize = tb.wire.iter().filter(|(p, _)| *p == phase).map(|(_, n)| n).sum();
        println!("{phase:?}: {bytes} octets");
    }
}
