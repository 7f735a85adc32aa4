//! The scripted attack suite, summarized per family.

use std::collections::BTreeMap;

use agentgov::eval::attack::run_attack_matrix;

fn main() {
    let m = run_attack_matrix();
    let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &m.rows {
        let e = per.entry(r.family).or_default();
        e.0 += 1;
        e.1 += usize::from(r.pass);
    }
    for (family, (n, ok)) in &per {
        println!("{family:<12} {ok:>3}/{n:<3}");
    }
    for r in m.failures() {
        println!("FAIL {} {}: expected {}, saw {}", r.family, r.case, r.expected, r.observed);
    }
    std::process::exit(if m.passed() { 0 } else { 1 });
}
