//! Runs a scenario file through the simulator and prints its summary.
//!
//! `cargo run --example scenario -- scenarios/mutation.scn`

use std::path::PathBuf;

use agentgov::netsim::run_scenario_file;

fn main() {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/replay_m0.scn")
    });
    let report = run_scenario_file(&path, None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    print!("{}", report.render());
    print!("{}", report.sessions_csv());
    std::process::exit(if report.passed() { 0 } else { 1 });
}
