//! Times the primitives on this machine.
//!
//! `cargo run --release --example bench -- 1000`

use agentgov::eval::bench::{bench_csv, bench_primitives};

fn main() {
    let iters = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    print!("{}", bench_csv(&bench_primitives(iters)));
}
