use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agentgov::eval::attack::run_matrix;
use agentgov::eval::bandwidth::BandwidthReport;
use agentgov::eval::bench::{bench_csv, bench_primitives};
use agentgov::eval::models::{self, parse_decimal, Exact, ProtoInput, LIFETIME_SWEEP};
use agentgov::eval::rtt::RttTable;
use agentgov::netsim::{run_scenario_file, RunReport};

#[derive(Parser)]
#[command(name = "agentgov", version, about = "Run scenarios, attack the protocol, benchmark primitives and evaluate overhead models")]
struct Cli {
    /// Directory for logs and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file; prints one CSV row per session.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the scripted attack suite; prints one CSV row per attempt.
    AttackMatrix {
        /// Rounds per attacked session.
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
        q: u64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Time the primitives on this machine.
    Bench {
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        iters: u64,
    },
    /// Evaluate an overhead model to CSV.
    Model {
        #[command(subcommand)]
        which: Model,
    },
    /// Octets per protocol phase for a scenario run.
    Bandwidth {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum Model {
    /// Latency of m requests split into sessions of at most q-max.
    Proto {
        #[arg(long, value_delimiter = ',', required = true)]
        m: Vec<u64>,
        #[arg(long, default_value_t = 10)]
        q_max: u64,
        /// Round-trip time in ms. Conflicts with --from/--to.
        #[arg(long, value_parser = decimal, conflicts_with_all = ["from", "to"])]
        rtt: Option<Exact>,
        /// Regions to look the round-trip time up in the bundled table.
        #[arg(long, requires = "to")]
        from: Option<String>,
        #[arg(long, requires = "from")]
        to: Option<String>,
        /// Alternative RTT table (from,to,rtt_ms).
        #[arg(long)]
        rtt_table: Option<PathBuf>,
        #[arg(long, value_parser = decimal, default_value = "20.33")]
        t_crypto: Exact,
    },
    /// Provider time per day.
    Provider {
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 10, 100, 1000])]
        n: Vec<u64>,
        /// Session lifetimes in minutes; defaults to a sweep from 1 to 1440.
        #[arg(long, value_delimiter = ',', value_parser = decimal)]
        lifetime: Vec<Exact>,
        #[arg(long, value_parser = decimal, default_value = "2.96")]
        t_crypto: Exact,
    },
    /// Orchestrator time per day.
    Initiator {
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 5, 10, 15])]
        t: Vec<u64>,
        #[arg(long, value_delimiter = ',', value_parser = decimal)]
        lifetime: Vec<Exact>,
    },
}

fn decimal(s: &str) -> Result<Exact, String> {
    parse_decimal(s).map_err(|e| e.to_string())
}

fn sweep(given: Vec<Exact>) -> Vec<Exact> {
    if given.is_empty() {
        LIFETIME_SWEEP.iter().map(|&l| Exact::from_integer(l)).collect()
    } else {
        given
    }
}

fn write_out(out: Option<&Path>, name: &str, bytes: &[u8]) -> Result<(), String> {
    let Some(dir) = out else { return Ok(()) };
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
}

fn save_run(out: Option<&Path>, name: &str, report: &RunReport) -> Result<(), String> {
    write_out(out, &format!("{name}.log"), &report.to_log())?;
    write_out(out, &format!("{name}.txt"), report.render().as_bytes())?;
    write_out(out, &format!("{name}.expect.csv"), report.expectations_csv().as_bytes())
}

fn run(cli: Cli) -> Result<bool, String> {
    let out = cli.out.as_deref();
    match cli.cmd {
        Cmd::Run { scenario, seed } => {
            let report = run_scenario_file(&scenario, seed).map_err(|e| e.to_string())?;
            save_run(out, &stem(&scenario), &report)?;
            print!("{}", report.sessions_csv());
            for e in report.expectations.iter().filter(|e| !e.passed) {
                eprintln!("line {}: {} ({})", e.line, e.text, e.detail);
            }
            Ok(report.passed())
        }
        Cmd::AttackMatrix { q, seed } => {
            let m = run_matrix(q, seed);
            let csv = m.to_csv();
            write_out(out, "attack-matrix.csv", csv.as_bytes())?;
            print!("{csv}");
            for r in m.failures() {
                eprintln!("FAIL {} / {}: expected {}, observed {}", r.family, r.case, r.expected, r.observed);
            }
            eprintln!("{} of {} rows pass", m.rows.len() - m.failures().len(), m.rows.len());
            Ok(m.passed())
        }
        Cmd::Bench { iters } => {
            let csv = bench_csv(&bench_primitives(iters as usize));
            write_out(out, "bench.csv", csv.as_bytes())?;
            print!("{csv}");
            Ok(true)
        }
        Cmd::Model { which } => {
            let csv = match which {
                Model::Proto { m, q_max, rtt, from, to, rtt_table, t_crypto } => {
                    let (rtt, label) = match (rtt, from, to) {
                        (Some(r), _, _) => (r, "given".to_string()),
                        (None, Some(a), Some(b)) => {
                            let table = match rtt_table {
                                Some(p) => {
                                    let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                                    RttTable::parse(&text).map_err(|e| e.to_string())?
                                }
                                None => RttTable::bundled(),
                            };
                            (table.get(&a, &b).map_err(|e| e.to_string())?, format!("{a}-{b}"))
                        }
                        _ => (Exact::from_integer(0), "zero".to_string()),
                    };
                    let rows: Vec<(String, ProtoInput)> =
                        m.into_iter().map(|m| (label.clone(), ProtoInput { m, q_max, rtt, t_crypto })).collect();
                    models::proto_csv(&rows)
                }
                Model::Provider { n, lifetime, t_crypto } => models::provider_csv(&n, &sweep(lifetime), &t_crypto),
                Model::Initiator { t, lifetime } => models::initiator_csv(&t, &sweep(lifetime)),
            }
            .map_err(|e| e.to_string())?;
            write_out(out, "model.csv", csv.as_bytes())?;
            print!("{csv}");
            Ok(true)
        }
        Cmd::Bandwidth { scenario, seed } => {
            let report = run_scenario_file(&scenario, seed).map_err(|e| e.to_string())?;
            save_run(out, &stem(&scenario), &report)?;
            let bw = BandwidthReport::from_run(&report);
            print!("{}", bw.to_csv());
            let balanced = bw.total() == bw.measured;
            if !balanced {
                eprintln!("rows sum to {} but {} octets were measured", bw.total(), bw.measured);
            }
            Ok(balanced && report.passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
