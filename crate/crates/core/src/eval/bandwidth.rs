//! Octets per protocol phase, summed from the frames a run actually sent.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::asession::Frame;
use crate::crypto::Digest;
use crate::netsim::{Origin, RunReport};
use crate::testbed::Phase;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandwidthRow {
    pub phase: &'static str,
    pub session: String,
    /// Request round for `request` rows, 0 otherwise.
    pub round: u64,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BandwidthReport {
    pub rows: Vec<BandwidthRow>,
    /// Sum of every Provider exchange and every packet in the run.
    pub measured: usize,
}

#[derive(Default)]
struct PerSession {
    establishment: usize,
    requests: Vec<usize>,
    responses: Vec<usize>,
    terminal: usize,
}

impl BandwidthReport {
    /// Splits a run's traffic into rows. Round 1 travels inside the
    /// handshake, so its bytes count towards establishment and request rows
    /// start at round 2.
    pub fn from_run(run: &RunReport) -> Self {
        let mut rows = Vec::new();
        let provider = |want: Phase| run.provider_traffic.iter().filter(|(p, _)| *p == want).map(|(_, n)| n).sum::<usize>();
        rows.push(BandwidthRow { phase: "user-registration", session: String::new(), round: 0, bytes: provider(Phase::UserRegistration) });
        rows.push(BandwidthRow { phase: "agent-registration", session: String::new(), round: 0, bytes: provider(Phase::AgentRegistration) });

        let by_sid: BTreeMap<Digest, usize> = run.sessions.iter().enumerate().filter_map(|(i, s)| Some((s.sid?, i))).collect();
        let mut per: Vec<PerSession> = run.sessions.iter().map(|s| PerSession { establishment: s.discovery_bytes, ..Default::default() }).collect();
        let named_discovery: usize = run.sessions.iter().map(|s| s.discovery_bytes).sum();
        let mut other = provider(Phase::Discovery) - named_discovery;
        let mut adversarial = 0;

        for p in &run.packets {
            if p.origin != Origin::Honest || p.mutated {
                adversarial += p.bytes.len();
                continue;
            }
            let Some(slot) = Frame::from_bytes(&p.bytes).ok().and_then(|f| by_sid.get(&f.sid()).copied()) else {
                other += p.bytes.len();
                continue;
            };
            let s = &mut per[slot];
            match p.kind() {
                "handshake-init" | "handshake-resp" => s.establishment += p.bytes.len(),
                "request" => s.requests.push(p.bytes.len()),
                "response" => s.responses.push(p.bytes.len()),
                _ => s.terminal += p.bytes.len(),
            }
        }

        for (rec, s) in run.sessions.iter().zip(per) {
            let name = rec.name.clone();
            rows.push(BandwidthRow { phase: "session-establishment", session: name.clone(), round: 1, bytes: s.establishment });
            let rounds = s.requests.len().max(s.responses.len());
            for k in 0..rounds {
                let bytes = s.requests.get(k).unwrap_or(&0) + s.responses.get(k).unwrap_or(&0);
                rows.push(BandwidthRow { phase: "request", session: name.clone(), round: k as u64 + 2, bytes });
            }
            rows.push(BandwidthRow { phase: "close", session: name, round: 0, bytes: s.terminal });
        }
        rows.push(BandwidthRow { phase: "other", session: String::new(), round: 0, bytes: other });
        rows.push(BandwidthRow { phase: "adversary", session: String::new(), round: 0, bytes: adversarial });

        let measured = run.provider_traffic.iter().map(|(_, n)| n).sum::<usize>() + run.packets.iter().map(|p| p.bytes.len()).sum::<usize>();
        BandwidthReport { rows, measured }
    }

    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.bytes).sum()
    }

    pub fn establishment(&self, session: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.phase == "session-establishment" && r.session == session).map(|r| r.bytes)
    }

    pub fn request_sizes(&self, session: &str) -> Vec<usize> {
        self.rows.iter().filter(|r| r.phase == "request" && r.session == session).map(|r| r.bytes).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("phase,session,round,bytes,kb\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{:.2}", r.phase, r.session, r.round, r.bytes, r.bytes as f64 / 1024.0);
        }
        let _ = writeln!(s, "total,,0,{},{:.2}", self.total(), self.total() as f64 / 1024.0);
        s
    }
}
