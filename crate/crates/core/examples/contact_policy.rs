//! Contact rules, wildcard matching and budget resolution.

use agentgov::policy::{resolve_budget, Aid, Budget, Direction, PolicyFile};

const ALICE: &str = "
receive *                        1
receive *@y.com:cal              5
receive bob@y.com:cal            10
rcp alice@x.com:mail * 3 60
rcp alice@x.com:mail bob@y.com:cal 8 120
";

fn main() {
    let alice = PolicyFile::parse(ALICE).expect("valid policy");
    let bob_pf = PolicyFile::parse("send alice@x.com:mail 4").unwrap();
    let me = Aid::parse("alice@x.com:mail").unwrap();

    for peer in ["bob@y.com:cal", "carol@y.com:cal", "dave@z.com:files"] {
        let peer = Aid::parse(peer).unwrap();
        let rule = alice.contact.match_rule(Direction::Receive, &peer).expect("global rule covers all");
        println!("{peer:<18} matches {:<18} budget {}", rule.pattern.to_string(), rule.budget);
    }
    let bob = Aid::parse("bob@y.com:cal").unwrap();
    // the smaller of alice's receive budget and bob's send budget
    assert_eq!(resolve_budget(&alice.contact, &bob_pf.contact, &me, &bob), Budget::Limit(4));
    // an initiator with no send rule for alice gets nothing, whatever alice allows
    let eve = Aid::parse("eve@e.com:x").unwrap();
    let eve_pf = PolicyFile::parse("send *@q.com:bot 9").unwrap();
    assert_eq!(resolve_budget(&alice.contact, &eve_pf.contact, &me, &eve), Budget::NoMatch);
    println!("bob may open {} sessions with alice", resolve_budget(&alice.contact, &bob_pf.contact, &me, &bob).as_i64());
}
