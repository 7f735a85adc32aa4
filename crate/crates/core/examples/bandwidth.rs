//! Octets per protocol phase in the default two-agent scenario.

use std::path::PathBuf;

use agentgov::eval::bandwidth::BandwidthReport;
use agentgov::netsim::run_scenario_file;

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/default.scn");
    let report = run_scenario_file(&path, None).expect("shipped scenario runs");
    let bw = BandwidthReport::from_run(&report);
    print!("{}", bw.to_csv());
    let est = bw.establishment("s1").unwrap();
    let req = bw.request_sizes("s1")[0];
    println!("establishment / request = {:.0}", est as f64 / req as f64);
    assert_eq!(bw.total(), bw.measured);
}
