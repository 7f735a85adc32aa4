//! The closed-form overhead models, in exact arithmetic.

use agentgov::eval::models::{
    format_decimal, initiator_overhead, proto_overhead, provider_overhead, provider_resolution_ms, session_crypto_ms, Exact, ProtoInput,
};
use agentgov::eval::rtt::RttTable;

fn main() {
    let rtt = RttTable::bundled().get("europe", "us-east").unwrap();
    for m in [1, 10, 100, 1000] {
        let c = proto_overhead(&ProtoInput { m, q_max: 10, rtt, t_crypto: session_crypto_ms() }).unwrap();
        println!("m={m:<5} cycles={:<4} total={} ms  per request={} ms", c.cycles, format_decimal(&c.total, 3), format_decimal(&c.amortized, 3));
    }
    let day = Exact::from_integer(1440);
    println!("provider, 100 agents, daily sessions: {} ms/day", format_decimal(&provider_overhead(100, &day, &provider_resolution_ms()).unwrap(), 3));
    for (t, l) in [(1, 1), (15, 1), (15, 60), (15, 480)] {
        let v = initiator_overhead(t, &Exact::from_integer(l)).unwrap();
        println!("orchestrator, t={t:<2} lifetime {l:>3} min: {} s/day", format_decimal(&(v / Exact::from_integer(1000)), 3));
    }
}
