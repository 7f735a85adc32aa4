//! Contact policies (CP), responder/initiator session policies (RCP/ICP) and
//! budget resolution.

pub mod file;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};

pub use file::PolicyFile;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("malformed agent id {0:?}")]
    MalformedAid(String),
    #[error("malformed pattern {0:?}")]
    MalformedPattern(String),
    #[error("{planned} responders but only {chains} chains")]
    TooManyResponders { planned: usize, chains: u64 },
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Agent identifier `user@domain:name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Aid {
    raw: String,
    at: usize,
    colon: usize,
}

impl Aid {
    pub fn parse(s: &str) -> Result<Self, PolicyError> {
        let bad = || PolicyError::MalformedAid(s.to_string());
        let colon = s.rfind(':').ok_or_else(bad)?;
        let at = s[..colon].find('@').ok_or_else(bad)?;
        let (user, domain, name) = (&s[..at], &s[at + 1..colon], &s[colon + 1..]);
        let clean = |p: &str| !p.is_empty() && !p.contains(['*', '@', ':']) && !p.chars().any(char::is_whitespace);
        if !(clean(user) && clean(domain) && clean(name)) {
            return Err(bad());
        }
        Ok(Aid { raw: s.to_string(), at, colon })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn user(&self) -> &str {
        &self.raw[..self.at]
    }

    pub fn domain(&self) -> &str {
        &self.raw[self.at + 1..self.colon]
    }

    pub fn name(&self) -> &str {
        &self.raw[self.colon + 1..]
    }

    /// Owning user id, `user@domain`.
    pub fn uid(&self) -> &str {
        &self.raw[..self.colon]
    }
}

impl fmt::Display for Aid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for Aid {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aid::parse(s)
    }
}

impl Encode for Aid {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(&self.raw);
    }
}

impl Decode for Aid {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Aid::parse(&dec.string()?).map_err(|_| DecodeError::Invalid("agent id"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Send,
    Receive,
}

impl FromStr for Direction {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "send" => Ok(Direction::Send),
            "receive" => Ok(Direction::Receive),
            other => Err(PolicyError::Invalid(format!("unknown direction {other:?}"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Send => "send",
            Direction::Receive => "receive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AidPattern {
    Exact(Aid),
    /// `*@domain:name`
    Domain { domain: String, name: String },
    Global,
}

impl AidPattern {
    pub fn parse(s: &str) -> Result<Self, PolicyError> {
        if s == "*" {
            return Ok(AidPattern::Global);
        }
        if let Some(rest) = s.strip_prefix("*@") {
            // Reuse the aid grammar with a placeholder user.
            let probe = Aid::parse(&format!("x@{rest}")).map_err(|_| PolicyError::MalformedPattern(s.into()))?;
            return Ok(AidPattern::Domain { domain: probe.domain().into(), name: probe.name().into() });
        }
        Aid::parse(s).map(AidPattern::Exact).map_err(|_| PolicyError::MalformedPattern(s.into()))
    }

    pub fn specificity(&self) -> u8 {
        match self {
            AidPattern::Exact(_) => 2,
            AidPattern::Domain { .. } => 1,
            AidPattern::Global => 0,
        }
    }

    pub fn matches(&self, aid: &Aid) -> bool {
        match self {
            AidPattern::Exact(a) => a == aid,
            AidPattern::Domain { domain, name } => aid.domain() == domain && aid.name() == name,
            AidPattern::Global => true,
        }
    }
}

impl fmt::Display for AidPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AidPattern::Exact(a) => write!(f, "{a}"),
            AidPattern::Domain { domain, name } => write!(f, "*@{domain}:{name}"),
            AidPattern::Global => f.write_str("*"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactRule {
    pub direction: Direction,
    pub pattern: AidPattern,
    /// Maximum number of A-sessions.
    pub budget: u32,
}

impl ContactRule {
    pub fn new(direction: Direction, pattern: &str, budget: u32) -> Result<Self, PolicyError> {
        Ok(ContactRule { direction, pattern: AidPattern::parse(pattern)?, budget })
    }
}

impl Encode for ContactRule {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(&self.direction.to_string()).str(&self.pattern.to_string()).u64(u64::from(self.budget));
    }
}

impl Decode for ContactRule {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let direction = dec.string()?.parse().map_err(|_| DecodeError::Invalid("direction"))?;
        let pattern = AidPattern::parse(&dec.string()?).map_err(|_| DecodeError::Invalid("pattern"))?;
        let budget = u32::try_from(dec.u64()?).map_err(|_| DecodeError::Invalid("budget"))?;
        Ok(ContactRule { direction, pattern, budget })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContactPolicy {
    pub rules: Vec<ContactRule>,
}

impl ContactPolicy {
    pub fn new(rules: Vec<ContactRule>) -> Self {
        ContactPolicy { rules }
    }

    /// Most specific rule for `peer` in `direction`; the first declared rule
    /// wins among equally specific ones.
    pub fn match_rule(&self, direction: Direction, peer: &Aid) -> Option<&ContactRule> {
        self.rules
            .iter()
            .filter(|r| r.direction == direction && r.pattern.matches(peer))
            .fold(None, |best: Option<&ContactRule>, r| match best {
                Some(b) if b.pattern.specificity() >= r.pattern.specificity() => Some(b),
                _ => Some(r),
            })
    }

    /// Like [`match_rule`](Self::match_rule) but on an unparsed id.
    pub fn match_str(&self, direction: Direction, peer: &str) -> Result<Option<&ContactRule>, PolicyError> {
        let aid = Aid::parse(peer)?;
        Ok(self.match_rule(direction, &aid))
    }
}

impl Encode for ContactPolicy {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.list(&self.rules);
    }
}

impl Decode for ContactPolicy {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ContactPolicy { rules: dec.list()? })
    }
}

/// Outcome of resolving the A-session budget between two agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// At least one side has no matching rule.
    NoMatch,
    Limit(u32),
}

impl Budget {
    /// `-1` for no match, else the limit.
    pub fn as_i64(self) -> i64 {
        match self {
            Budget::NoMatch => -1,
            Budget::Limit(b) => i64::from(b),
        }
    }
}

/// The responder must accept `aid_i` (receive rule) and the initiator must
/// be allowed to contact `aid_r` (send rule); the budget is the smaller one.
pub fn resolve_budget(cp_r: &ContactPolicy, cp_i: &ContactPolicy, aid_r: &Aid, aid_i: &Aid) -> Budget {
    match (cp_r.match_rule(Direction::Receive, aid_i), cp_i.match_rule(Direction::Send, aid_r)) {
        (Some(r), Some(i)) => Budget::Limit(r.budget.min(i.budget)),
        _ => Budget::NoMatch,
    }
}

pub type Tick = u64;

/// Per-session message and time budget granted by a responder to one
/// initiator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponderPolicy {
    pub responder: Aid,
    pub initiator: AidPattern,
    pub q: u64,
    pub delta: Tick,
}

impl ResponderPolicy {
    pub fn new(responder: Aid, initiator: AidPattern, q: u64, delta: Tick) -> Result<Self, PolicyError> {
        if q == 0 || delta == 0 {
            return Err(PolicyError::Invalid("rcp budget and duration must be positive".into()));
        }
        Ok(ResponderPolicy { responder, initiator, q, delta })
    }
}

/// Total message/time budget of an initiator, factored as `m` chains of
/// length `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitiatorPolicy {
    pub initiator: Aid,
    pub q_tot: u64,
    pub delta_tot: Tick,
    pub chain_count: u64,
    pub chain_len: u64,
}

impl InitiatorPolicy {
    pub fn new(initiator: Aid, q_tot: u64, delta_tot: Tick, chain_count: u64, chain_len: u64) -> Result<Self, PolicyError> {
        if chain_count == 0 || chain_len == 0 || delta_tot == 0 {
            return Err(PolicyError::Invalid("icp counts and duration must be positive".into()));
        }
        if chain_count.checked_mul(chain_len) != Some(q_tot) {
            return Err(PolicyError::Invalid(format!(
                "q_tot {q_tot} must equal m x n = {chain_count} x {chain_len}"
            )));
        }
        Ok(InitiatorPolicy { initiator, q_tot, delta_tot, chain_count, chain_len })
    }
}

/// Componentwise minimum of the two sides' message and time budgets.
pub fn effective_session_policy(q_i: u64, delta_i: Tick, q_r: u64, delta_r: Tick) -> (u64, Tick) {
    (q_i.min(q_r), delta_i.min(delta_r))
}

/// Chains handed to one planned responder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainAssignment {
    pub chains: Vec<u64>,
    pub chain_len: u64,
}

impl ChainAssignment {
    pub fn capacity(&self) -> u64 {
        self.chains.len() as u64 * self.chain_len
    }
}

/// Round-robin assignment of all `m` chains over `t` planned responders.
pub fn split_icp(icp: &InitiatorPolicy, t: usize) -> Result<Vec<ChainAssignment>, PolicyError> {
    if t == 0 || t as u64 > icp.chain_count {
        return Err(PolicyError::TooManyResponders { planned: t, chains: icp.chain_count });
    }
    let mut out = vec![ChainAssignment { chains: Vec::new(), chain_len: icp.chain_len }; t];
    for c in 0..icp.chain_count {
        out[(c % t as u64) as usize].chains.push(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aid(s: &str) -> Aid {
        Aid::parse(s).unwrap()
    }

    #[test]
    fn aid_grammar() {
        let a = aid("alice@x.org:mail");
        assert_eq!((a.user(), a.domain(), a.name(), a.uid()), ("alice", "x.org", "mail", "alice@x.org"));
        for bad in ["alice", "alice:mail", "@x:mail", "alice@x:", "a*@x:m", "a@x:m n"] {
            assert!(Aid::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn exact_beats_global() {
        let cp = ContactPolicy::new(vec![
            ContactRule::new(Direction::Receive, "*", 5).unwrap(),
            ContactRule::new(Direction::Receive, "alice@x:mail", 9).unwrap(),
        ]);
        assert_eq!(cp.match_rule(Direction::Receive, &aid("alice@x:mail")).unwrap().budget, 9);
        assert_eq!(cp.match_rule(Direction::Receive, &aid("bob@x:mail")).unwrap().budget, 5);
        assert!(cp.match_rule(Direction::Send, &aid("bob@x:mail")).is_none());
    }

    #[test]
    fn domain_wildcard_rule() {
        let cp = ContactPolicy::new(vec![ContactRule::new(Direction::Receive, "*@company.com:email-agent", 10).unwrap()]);
        let r = cp.match_rule(Direction::Receive, &aid("bob@company.com:email-agent")).unwrap();
        assert_eq!(r.budget, 10);
        assert!(cp.match_rule(Direction::Receive, &aid("bob@company.com:calendar")).is_none());
        assert!(matches!(cp.match_str(Direction::Receive, "nope"), Err(PolicyError::MalformedAid(_))));
    }

    #[test]
    fn first_declared_wins_ties() {
        let cp = ContactPolicy::new(vec![
            ContactRule::new(Direction::Send, "*@d:x", 1).unwrap(),
            ContactRule::new(Direction::Send, "*@d:x", 2).unwrap(),
        ]);
        assert_eq!(cp.match_rule(Direction::Send, &aid("u@d:x")).unwrap().budget, 1);
    }

    #[test]
    fn budget_resolution() {
        let r = aid("r@d:svc");
        let i = aid("i@d:cli");
        let cp_r = ContactPolicy::new(vec![ContactRule::new(Direction::Receive, "*", 10).unwrap()]);
        let cp_i = ContactPolicy::new(vec![ContactRule::new(Direction::Send, "*", 20).unwrap()]);
        assert_eq!(resolve_budget(&cp_r, &cp_i, &r, &i), Budget::Limit(10));
        assert_eq!(resolve_budget(&ContactPolicy::default(), &cp_i, &r, &i).as_i64(), -1);
        let cp_i7 = ContactPolicy::new(vec![ContactRule::new(Direction::Send, "*", 7).unwrap()]);
        let cp_r7 = ContactPolicy::new(vec![ContactRule::new(Direction::Receive, "*", 7).unwrap()]);
        assert_eq!(resolve_budget(&cp_r7, &cp_i7, &r, &i), Budget::Limit(7));
    }

    #[test]
    fn effective_policy_is_componentwise_min() {
        assert_eq!(effective_session_policy(5, 100, 8, 60), (5, 60));
        assert_eq!(effective_session_policy(4, 4, 4, 4), (4, 4));
        assert_eq!(effective_session_policy(1, 1, 1000, 1000), (1, 1));
    }

    #[test]
    fn icp_split() {
        let icp = InitiatorPolicy::new(aid("o@d:orch"), 100, 50, 10, 10).unwrap();
        let s = split_icp(&icp, 10).unwrap();
        assert!(s.iter().all(|a| a.chains.len() == 1 && a.chain_len == 10));
        let icp4 = InitiatorPolicy::new(aid("o@d:orch"), 8, 50, 4, 2).unwrap();
        let s = split_icp(&icp4, 2).unwrap();
        assert_eq!(s[0].chains, vec![0, 2]);
        assert_eq!(s[1].chains, vec![1, 3]);
        assert!(matches!(split_icp(&icp4, 5), Err(PolicyError::TooManyResponders { .. })));
        assert!(InitiatorPolicy::new(aid("o@d:orch"), 9, 50, 4, 2).is_err());
    }
}
