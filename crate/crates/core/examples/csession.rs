//! An orchestrator spreading one global budget over several responders,
//! with chains committed up front (static) or authorized on the fly by
//! delegated one-time keys (dynamic).

use std::cell::Cell;

use agentgov::crypto::hash;
use agentgov::csession::{
    commit_static, delegate_dynamic, drive_csession, fresh_sid_nonces, plan_dynamic, plan_static, ChainSource, CSession, StubTask,
};
use agentgov::policy::InitiatorPolicy;
use agentgov::testbed::{contact_policy, KeyHeights, LocalLink, Testbed};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut tb = Testbed::new(8, KeyHeights { ca: 4, provider: 6, user: 5, agent: 4 }).unwrap();
    let orch = tb.add_agent("orch@o.com:planner", contact_policy(&[("send", "*", 20)]).unwrap()).unwrap();
    let mut rs = Vec::new();
    for k in 0..3 {
        let r = tb.add_agent(&format!("r{k}@s{k}.com:svc"), contact_policy(&[("receive", "*", 20)]).unwrap()).unwrap();
        tb.set_rcp(&r, "*", 10, 100).unwrap();
        rs.push(r);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let clock = Cell::new(0);

    let icp = InitiatorPolicy::new(orch.clone(), 6, 100, 3, 2).unwrap();
    let plan = plan_static(hash(b"static job"), rs.clone(), icp.clone()).unwrap();
    let nonces = fresh_sid_nonces(plan.responders.len(), &mut rng);
    let user = tb.users.get_mut(orch.uid()).unwrap();
    let sc = commit_static(&plan, &tb.agents[&orch], &nonces, user).unwrap();
    let mut cs = CSession::new(plan, ChainSource::Static(sc), 0);
    let report = {
        let mut link = LocalLink::new(&mut tb, orch.clone(), &clock);
        drive_csession(&mut cs, &mut link, &mut StubTask { max_rounds: None, max_hops: 8 }, &clock, &mut rng)
    };
    println!("static: {} of 6 tokens spent, halted {:?}", report.tokens_consumed(), report.halted);

    let plan = plan_dynamic(hash(b"dynamic job"), rs, icp).unwrap();
    let user = tb.users.get_mut(orch.uid()).unwrap();
    let dc = delegate_dynamic(3, 2, 6, user, &mut rng).unwrap();
    let mut cs = CSession::new(plan, ChainSource::Dynamic(dc), 0).with_global_cap(4);
    let report = {
        let mut link = LocalLink::new(&mut tb, orch.clone(), &clock);
        drive_csession(&mut cs, &mut link, &mut StubTask { max_rounds: None, max_hops: 8 }, &clock, &mut rng)
    };
    println!("dynamic: {} tokens spent under a cap of 4, halted {:?}", report.tokens_consumed(), report.halted);
    assert!(report.tokens_consumed() <= 4);
}
