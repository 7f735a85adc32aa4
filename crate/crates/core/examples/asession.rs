//! One budgeted session between two agents, in memory.

use agentgov::testbed::{contact_policy, KeyHeights, Testbed};

fn main() {
    let mut tb = Testbed::new(5, KeyHeights { ca: 4, provider: 6, user: 5, agent: 4 }).unwrap();
    let alice = tb.add_agent("alice@x.com:mail", contact_policy(&[("receive", "*", 5)]).unwrap()).unwrap();
    let bob = tb.add_agent("bob@y.com:cal", contact_policy(&[("send", "*", 5)]).unwrap()).unwrap();
    tb.set_rcp(&alice, "*", 3, 100).unwrap();

    // bob asks for 5 requests, alice's policy grants 3
    let (sid, m0) = tb.open_session(&bob, &alice, b"plan a meeting", 5, 100, b"when are you free?".to_vec(), 0).unwrap();
    let m1 = tb.serve(&alice, &bob, &m0, 0).expect("handshake answer");
    tb.serve(&bob, &alice, &m1, 0);
    let mut round = 1;
    loop {
        match tb.next_request(&bob, &sid, format!("request {}", round + 1).into_bytes(), 1) {
            Ok(req) => {
                let resp = tb.serve(&alice, &bob, &req, 1).expect("response");
                tb.serve(&bob, &alice, &resp, 1);
                round += 1;
            }
            Err(e) => {
                println!("after {round} rounds: {e}");
                break;
            }
        }
    }
    if let Some((peer, notice)) = tb.close_session(&bob, &sid) {
        tb.serve(&peer, &bob, &notice, 1);
    }
    for (who, aid) in [("bob", &bob), ("alice", &alice)] {
        let s = tb.hosts[aid].sessions[&sid].summary();
        println!("{who:<5} {:?} requests={} responses={} revealed={}", s.cause, s.requests, s.responses, s.own_revealed);
    }
    for (_, payload) in &tb.hosts[&bob].received {
        println!("bob got {}", String::from_utf8_lossy(payload));
    }
}
