//! Scenario files.
//!
//! One directive per line, `#` starts a comment. Directives run in order.
//!
//! ```text
//! seed 7
//! keys 4 6 5 4                      # ca provider user agent tree heights
//! agent alice@x.com:mail receive * 10
//! policy bob@y.com:cal bob.policy  # contact rules, rcp and icp lines
//! rcp alice@x.com:mail * 5 100      # responder pattern q delta
//! corrupt bob@y.com:cal
//!
//! session s1 bob@y.com:cal alice@x.com:mail q=3 delta=50 req=hello
//! run                               # deliver until nothing is due
//! request s1 second question
//! step                              # deliver one packet
//! advance 10
//! close s1
//!
//! drop 3 | delay 3 5 | replay 0 | flip 0 2.1 | mutate 0 2.1 00ff
//! inject bob@y.com:cal alice@x.com:mail 12abcd
//! on bob@y.com:cal request 2 flip 3 # standing rule on the 2nd request bob sends
//!
//! csession c1 orch@o.com:plan static to=a@a.com:x,b@b.com:y m=2 n=3 delta=100 cap=5
//!
//! expect s1 status initiator closed
//! expect s1 executed 3              # also accepted, revealed; `<=N`, `>=N`
//! expect s1 fault ReplayedNonce initiator
//! expect s1 error OwnBudgetExhausted
//! expect s1 audit clean             # or: audit BadTag responder
//! expect c1 tokens <=6
//! expect c1 halted GlobalQuotaExhausted   # or: halted none
//! expect alice@x.com:mail rejected BadTag initiator
//! expect adversary refused 1
//! expect no-leaks
//! ```

use std::path::PathBuf;

use thiserror::Error;

use crate::asession::{Fault, Role};
use crate::policy::{Aid, Tick};
use crate::testbed::KeyHeights;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ScenarioParseError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryAction {
    Drop(u64),
    Delay(u64, Tick),
    Replay(u64),
    Mutate(u64, Vec<usize>, Vec<u8>),
    Flip(u64, Vec<usize>),
    Inject(Aid, Aid, Vec<u8>),
}

/// Applied to the `nth` (from 1) frame of `kind` that `sender` puts on the
/// wire. The packet id is filled in at that point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub sender: Aid,
    pub kind: String,
    pub nth: usize,
    pub action: RuleAction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleAction {
    Drop,
    Delay(Tick),
    Replay,
    Flip(Vec<usize>),
    Mutate(Vec<usize>, Vec<u8>),
}

impl RuleAction {
    pub fn on(&self, id: u64) -> AdversaryAction {
        match self {
            RuleAction::Drop => AdversaryAction::Drop(id),
            RuleAction::Delay(k) => AdversaryAction::Delay(id, *k),
            RuleAction::Replay => AdversaryAction::Replay(id),
            RuleAction::Flip(p) => AdversaryAction::Flip(id, p.clone()),
            RuleAction::Mutate(p, b) => AdversaryAction::Mutate(id, p.clone(), b.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CMode {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CSessionSpec {
    pub name: String,
    pub orchestrator: Aid,
    pub mode: CMode,
    pub responders: Vec<Aid>,
    /// `(m, n, delta_tot)`; taken from the orchestrator's icp when absent.
    pub shape: Option<(u64, u64, Tick)>,
    pub cap: Option<u64>,
    pub rounds: Option<u64>,
    pub hops: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Le,
    Ge,
}

impl Cmp {
    pub fn holds(self, actual: u64, want: u64) -> bool {
        match self {
            Cmp::Eq => actual == want,
            Cmp::Le => actual <= want,
            Cmp::Ge => actual >= want,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Eq => "=",
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    Status { session: String, role: Role, status: String },
    /// `executed`, `accepted`, `revealed` on sessions; `tokens` on C-sessions.
    Count { target: String, metric: String, cmp: Cmp, value: u64 },
    Fault { session: String, fault: Fault, role: Role },
    Error { target: String, label: String },
    Audit { session: String, verdict: Option<(Fault, Role)> },
    Halted { csession: String, label: Option<String> },
    Rejected { host: Aid, fault: Fault, role: Role },
    Refused { cmp: Cmp, value: u64 },
    NoLeaks,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Agent { aid: String, rules: Vec<(String, String, u32)> },
    Policy { aid: String, path: PathBuf },
    Rcp { responder: String, pattern: String, q: u64, delta: Tick },
    Corrupt(Aid),
    Session { name: String, initiator: Aid, responder: Aid, q: u64, delta: Tick, task: String, payload: Vec<u8> },
    Request { name: String, payload: Vec<u8> },
    Close(String),
    Run,
    Deliver,
    Advance(Tick),
    Adversary(AdversaryAction),
    Rule(Rule),
    CSession(CSessionSpec),
    Expect(Expectation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub heights: KeyHeights,
    /// `(line number, source text, step)`.
    pub steps: Vec<(usize, String, Step)>,
}

struct Line<'a> {
    no: usize,
    toks: Vec<&'a str>,
}

impl<'a> Line<'a> {
    fn err(&self, msg: impl Into<String>) -> ScenarioParseError {
        ScenarioParseError { line: self.no, msg: msg.into() }
    }

    fn tok(&self, i: usize, what: &str) -> Result<&'a str, ScenarioParseError> {
        self.toks.get(i).copied().ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn num<T: std::str::FromStr>(&self, i: usize, what: &str) -> Result<T, ScenarioParseError> {
        let t = self.tok(i, what)?;
        t.parse().map_err(|_| self.err(format!("bad {what} {t:?}")))
    }

    fn aid(&self, i: usize) -> Result<Aid, ScenarioParseError> {
        let t = self.tok(i, "agent id")?;
        Aid::parse(t).map_err(|e| self.err(e.to_string()))
    }

    fn path(&self, i: usize) -> Result<Vec<usize>, ScenarioParseError> {
        let t = self.tok(i, "field path")?;
        t.split('.').map(|s| s.parse().map_err(|_| self.err(format!("bad field path {t:?}")))).collect()
    }

    fn hex(&self, i: usize) -> Result<Vec<u8>, ScenarioParseError> {
        let t = self.tok(i, "hex bytes")?;
        hex::decode(t).map_err(|_| self.err(format!("bad hex {t:?}")))
    }

    fn rest(&self, from: usize) -> Vec<u8> {
        self.toks.get(from..).map(|t| t.join(" ")).unwrap_or_default().into_bytes()
    }

    fn arity(&self, n: usize) -> Result<(), ScenarioParseError> {
        if self.toks.len() != n {
            return Err(self.err(format!("expected {} arguments", n - 1)));
        }
        Ok(())
    }

    fn fault(&self, i: usize) -> Result<Fault, ScenarioParseError> {
        let t = self.tok(i, "fault")?;
        Fault::ALL.iter().copied().find(|f| f.to_string() == t).ok_or_else(|| self.err(format!("unknown fault {t:?}")))
    }

    fn role(&self, i: usize) -> Result<Role, ScenarioParseError> {
        match self.tok(i, "role")? {
            "initiator" => Ok(Role::Initiator),
            "responder" => Ok(Role::Responder),
            t => Err(self.err(format!("unknown role {t:?}"))),
        }
    }

    fn cmp(&self, i: usize) -> Result<(Cmp, u64), ScenarioParseError> {
        let t = self.tok(i, "count")?;
        let (cmp, digits) = if let Some(d) = t.strip_prefix("<=") {
            (Cmp::Le, d)
        } else if let Some(d) = t.strip_prefix(">=") {
            (Cmp::Ge, d)
        } else {
            (Cmp::Eq, t)
        };
        digits.parse().map(|v| (cmp, v)).map_err(|_| self.err(format!("bad count {t:?}")))
    }

    /// `key=value` options from position `from` on.
    fn options(&self, from: usize, allowed: &[&str]) -> Result<Vec<(&'a str, &'a str)>, ScenarioParseError> {
        let mut out = Vec::new();
        for t in self.toks.iter().skip(from) {
            let (k, v) = t.split_once('=').ok_or_else(|| self.err(format!("expected key=value, got {t:?}")))?;
            if !allowed.contains(&k) {
                return Err(self.err(format!("unknown option {k:?}")));
            }
            out.push((k, v));
        }
        Ok(out)
    }
}

fn opt<'a>(opts: &[(&str, &'a str)], key: &str) -> Option<&'a str> {
    opts.iter().rev().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

fn opt_num<T: std::str::FromStr>(l: &Line, opts: &[(&str, &str)], key: &str) -> Result<Option<T>, ScenarioParseError> {
    opt(opts, key).map(|v| v.parse().map_err(|_| l.err(format!("bad {key} {v:?}")))).transpose()
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioParseError> {
    let mut sc = Scenario { seed: 0, heights: KeyHeights::default(), steps: Vec::new() };
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let l = Line { no: i + 1, toks: content.split_whitespace().collect() };
        let step = match l.toks[0] {
            "seed" => {
                l.arity(2)?;
                sc.seed = l.num(1, "seed")?;
                continue;
            }
            "keys" => {
                l.arity(5)?;
                sc.heights = KeyHeights { ca: l.num(1, "height")?, provider: l.num(2, "height")?, user: l.num(3, "height")?, agent: l.num(4, "height")? };
                continue;
            }
            "agent" => {
                let aid = l.tok(1, "agent id")?.to_string();
                let rest = &l.toks[2..];
                if !rest.len().is_multiple_of(3) {
                    return Err(l.err("contact rules come in triples: direction pattern budget"));
                }
                let rules = rest
                    .chunks(3)
                    .map(|c| Ok((c[0].to_string(), c[1].to_string(), c[2].parse().map_err(|_| l.err(format!("bad budget {:?}", c[2])))?)))
                    .collect::<Result<_, ScenarioParseError>>()?;
                Step::Agent { aid, rules }
            }
            "policy" => {
                l.arity(3)?;
                Step::Policy { aid: l.tok(1, "agent id")?.into(), path: PathBuf::from(l.tok(2, "path")?) }
            }
            "rcp" => {
                l.arity(5)?;
                Step::Rcp { responder: l.tok(1, "responder")?.into(), pattern: l.tok(2, "pattern")?.into(), q: l.num(3, "q")?, delta: l.num(4, "delta")? }
            }
            "corrupt" => {
                l.arity(2)?;
                Step::Corrupt(l.aid(1)?)
            }
            "session" => {
                let opts = l.options(4, &["q", "delta", "task", "req"])?;
                Step::Session {
                    name: l.tok(1, "session name")?.into(),
                    initiator: l.aid(2)?,
                    responder: l.aid(3)?,
                    q: opt_num(&l, &opts, "q")?.ok_or_else(|| l.err("missing q="))?,
                    delta: opt_num(&l, &opts, "delta")?.ok_or_else(|| l.err("missing delta="))?,
                    task: opt(&opts, "task").unwrap_or("task").into(),
                    payload: opt(&opts, "req").unwrap_or("request 1").as_bytes().to_vec(),
                }
            }
            "request" => Step::Request { name: l.tok(1, "session name")?.into(), payload: l.rest(2) },
            "close" => {
                l.arity(2)?;
                Step::Close(l.tok(1, "session name")?.into())
            }
            "run" => {
                l.arity(1)?;
                Step::Run
            }
            "step" | "deliver" => {
                l.arity(1)?;
                Step::Deliver
            }
            "advance" => {
                l.arity(2)?;
                let k: Tick = l.num(1, "tick count")?;
                if k == 0 {
                    return Err(l.err("advance needs k >= 1"));
                }
                Step::Advance(k)
            }
            "drop" => {
                l.arity(2)?;
                Step::Adversary(AdversaryAction::Drop(l.num(1, "packet")?))
            }
            "delay" => {
                l.arity(3)?;
                Step::Adversary(AdversaryAction::Delay(l.num(1, "packet")?, l.num(2, "ticks")?))
            }
            "replay" => {
                l.arity(2)?;
                Step::Adversary(AdversaryAction::Replay(l.num(1, "packet")?))
            }
            "flip" => {
                l.arity(3)?;
                Step::Adversary(AdversaryAction::Flip(l.num(1, "packet")?, l.path(2)?))
            }
            "mutate" => {
                l.arity(4)?;
                Step::Adversary(AdversaryAction::Mutate(l.num(1, "packet")?, l.path(2)?, l.hex(3)?))
            }
            "inject" => {
                l.arity(4)?;
                Step::Adversary(AdversaryAction::Inject(l.aid(1)?, l.aid(2)?, l.hex(3)?))
            }
            "on" => {
                let action = match l.tok(4, "action")? {
                    "drop" => {
                        l.arity(5)?;
                        RuleAction::Drop
                    }
                    "replay" => {
                        l.arity(5)?;
                        RuleAction::Replay
                    }
                    "delay" => {
                        l.arity(6)?;
                        RuleAction::Delay(l.num(5, "ticks")?)
                    }
                    "flip" => {
                        l.arity(6)?;
                        RuleAction::Flip(l.path(5)?)
                    }
                    "mutate" => {
                        l.arity(7)?;
                        RuleAction::Mutate(l.path(5)?, l.hex(6)?)
                    }
                    a => return Err(l.err(format!("unknown action {a:?}"))),
                };
                let nth: usize = l.num(3, "occurrence")?;
                if nth == 0 {
                    return Err(l.err("occurrences count from 1"));
                }
                Step::Rule(Rule { sender: l.aid(1)?, kind: l.tok(2, "frame kind")?.into(), nth, action })
            }
            "csession" => parse_csession(&l)?,
            "expect" => Step::Expect(parse_expect(&l)?),
            other => return Err(l.err(format!("unknown directive {other:?}"))),
        };
        sc.steps.push((l.no, content.to_string(), step));
    }
    Ok(sc)
}

fn parse_csession(l: &Line) -> Result<Step, ScenarioParseError> {
    let mode = match l.tok(3, "mode")? {
        "static" => CMode::Static,
        "dynamic" => CMode::Dynamic,
        m => return Err(l.err(format!("mode must be static or dynamic, got {m:?}"))),
    };
    let opts = l.options(4, &["to", "m", "n", "delta", "cap", "rounds", "hops"])?;
    let responders = opt(&opts, "to")
        .ok_or_else(|| l.err("missing to="))?
        .split(',')
        .map(|a| Aid::parse(a).map_err(|e| l.err(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let shape = match (opt_num(l, &opts, "m")?, opt_num(l, &opts, "n")?, opt_num(l, &opts, "delta")?) {
        (Some(m), Some(n), Some(d)) => Some((m, n, d)),
        (None, None, None) => None,
        _ => return Err(l.err("give all of m=, n=, delta= or none")),
    };
    Ok(Step::CSession(CSessionSpec {
        name: l.tok(1, "name")?.into(),
        orchestrator: l.aid(2)?,
        mode,
        hops: opt_num(l, &opts, "hops")?.unwrap_or(responders.len()),
        responders,
        shape,
        cap: opt_num(l, &opts, "cap")?,
        rounds: opt_num(l, &opts, "rounds")?,
    }))
}

fn parse_expect(l: &Line) -> Result<Expectation, ScenarioParseError> {
    if l.toks.get(1) == Some(&"no-leaks") {
        l.arity(2)?;
        return Ok(Expectation::NoLeaks);
    }
    let target = l.tok(1, "target")?.to_string();
    let what = l.tok(2, "expectation")?;
    Ok(match what {
        "status" => {
            l.arity(5)?;
            Expectation::Status { session: target, role: l.role(3)?, status: l.tok(4, "status")?.into() }
        }
        "executed" | "accepted" | "revealed" | "tokens" => {
            l.arity(4)?;
            let (cmp, value) = l.cmp(3)?;
            Expectation::Count { target, metric: what.into(), cmp, value }
        }
        "fault" => {
            l.arity(5)?;
            Expectation::Fault { session: target, fault: l.fault(3)?, role: l.role(4)? }
        }
        "error" => {
            l.arity(4)?;
            Expectation::Error { target, label: l.tok(3, "label")?.into() }
        }
        "audit" => match l.toks.len() {
            4 if l.toks[3] == "clean" => Expectation::Audit { session: target, verdict: None },
            5 => Expectation::Audit { session: target, verdict: Some((l.fault(3)?, l.role(4)?)) },
            _ => return Err(l.err("audit takes `clean` or a fault and a role")),
        },
        "halted" => {
            l.arity(4)?;
            let label = l.tok(3, "label")?;
            Expectation::Halted { csession: target, label: (label != "none").then(|| label.to_string()) }
        }
        "rejected" => {
            l.arity(5)?;
            Expectation::Rejected { host: l.aid(1)?, fault: l.fault(3)?, role: l.role(4)? }
        }
        "refused" if target == "adversary" => {
            l.arity(4)?;
            let (cmp, value) = l.cmp(3)?;
            Expectation::Refused { cmp, value }
        }
        w => return Err(l.err(format!("unknown expectation {w:?}"))),
    })
}
