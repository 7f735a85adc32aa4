use std::path::PathBuf;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentgov"))
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn every_shipped_scenario_passes() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|x| x == "scn") {
            let o = bin(&["run", p.to_str().unwrap()]);
            assert!(o.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&o.stderr));
            assert!(stdout(&o).starts_with("session,initiator,responder"));
            n += 1;
        }
    }
    assert!(n >= 8);
}

#[test]
fn run_writes_logs_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["--out", dir.path().to_str().unwrap(), "run", "scenarios/mutation.scn"]);
    assert!(o.status.success());
    for f in ["mutation.log", "mutation.txt", "mutation.expect.csv"] {
        assert!(dir.path().join(f).metadata().unwrap().len() > 0, "{f}");
    }
}

#[test]
fn failed_expectation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("bad.scn");
    std::fs::write(
        &scn,
        "keys 4 5 4 4\nagent a@x.com:m receive * 1\nagent b@y.com:n send * 1\n\
         session s1 b@y.com:n a@x.com:m q=1 delta=5\nrun\nexpect s1 executed 2\n",
    )
    .unwrap();
    let o = bin(&["run", scn.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("executed 2"));
}

#[test]
fn bad_input_exits_two() {
    assert_eq!(bin(&["run", "scenarios/missing.scn"]).status.code(), Some(2));
    assert_eq!(bin(&["model", "initiator", "--t", "1", "--lifetime", "0"]).status.code(), Some(2));
    assert_eq!(bin(&["model", "proto", "--m", "1", "--from", "mars", "--to", "europe"]).status.code(), Some(2));
}

#[test]
fn model_golden_rows() {
    let o = bin(&["model", "proto", "--m", "100", "--q-max", "10", "--rtt", "0", "--t-crypto", "20.33"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().nth(1).unwrap().ends_with(",203.3,2.033"), "{}", stdout(&o));
    let o = bin(&["model", "provider", "--n", "100", "--lifetime", "1440"]);
    assert_eq!(stdout(&o).lines().nth(1), Some("100,1440,2.96,296"));
    let o = bin(&["model", "initiator", "--t", "15", "--lifetime", "1"]);
    assert_eq!(stdout(&o).lines().nth(1), Some("15,1,121.65,175176,175.176"));
    let sweep = bin(&["model", "initiator"]);
    assert!(stdout(&sweep).lines().count() > 4);
}

#[test]
fn attack_matrix_and_bandwidth_succeed() {
    let o = bin(&["attack-matrix", "--q", "2"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with(",true")));
    let o = bin(&["bandwidth", "scenarios/default.scn"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().last().unwrap().starts_with("total,"));
}

#[test]
fn bench_prints_one_row_per_op() {
    let o = bin(&["bench", "--iters", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 7);
}
