//! Line-oriented policy files.
//!
//! ```text
//! # contact rules: direction pattern budget
//! receive *@company.com:email-agent 10
//! send    bob@example.com:calendar  20
//! # rcp responder initiator q delta
//! rcp alice@example.com:mail * 5 100
//! # icp initiator q_tot delta_tot m n
//! icp alice@example.com:mail 6 100 2 3
//! ```

use super::{Aid, AidPattern, ContactPolicy, ContactRule, InitiatorPolicy, PolicyError, ResponderPolicy};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyFile {
    pub contact: ContactPolicy,
    pub rcp: Vec<ResponderPolicy>,
    pub icp: Vec<InitiatorPolicy>,
}

fn num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, PolicyError> {
    tok.parse().map_err(|_| PolicyError::Parse { line, msg: format!("bad {what} {tok:?}") })
}

impl PolicyFile {
    pub fn parse(text: &str) -> Result<Self, PolicyError> {
        let mut out = PolicyFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            let wrap = |e: PolicyError| PolicyError::Parse { line, msg: e.to_string() };
            match toks.as_slice() {
                ["rcp", responder, initiator, q, delta] => {
                    let rcp = ResponderPolicy::new(
                        Aid::parse(responder).map_err(wrap)?,
                        AidPattern::parse(initiator).map_err(wrap)?,
                        num(q, line, "q")?,
                        num(delta, line, "delta")?,
                    )
                    .map_err(wrap)?;
                    out.rcp.push(rcp);
                }
                ["icp", initiator, q_tot, delta_tot, m, n] => {
                    let icp = InitiatorPolicy::new(
                        Aid::parse(initiator).map_err(wrap)?,
                        num(q_tot, line, "q_tot")?,
                        num(delta_tot, line, "delta_tot")?,
                        num(m, line, "m")?,
                        num(n, line, "n")?,
                    )
                    .map_err(wrap)?;
                    out.icp.push(icp);
                }
                [direction, pattern, budget] => {
                    let rule = ContactRule::new(direction.parse().map_err(wrap)?, pattern, num(budget, line, "budget")?)
                        .map_err(wrap)?;
                    out.contact.rules.push(rule);
                }
                _ => return Err(PolicyError::Parse { line, msg: format!("unrecognised line {content:?}") }),
            }
        }
        Ok(out)
    }

    /// RCP entry for `initiator`, most specific pattern first.
    pub fn rcp_for(&self, responder: &Aid, initiator: &Aid) -> Option<&ResponderPolicy> {
        self.rcp
            .iter()
            .filter(|r| &r.responder == responder && r.initiator.matches(initiator))
            .fold(None, |best: Option<&ResponderPolicy>, r| match best {
                Some(b) if b.initiator.specificity() >= r.initiator.specificity() => Some(b),
                _ => Some(r),
            })
    }

    pub fn icp_for(&self, initiator: &Aid) -> Option<&InitiatorPolicy> {
        self.icp.iter().find(|p| &p.initiator == initiator)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.contact.rules {
            s.push_str(&format!("{} {} {}\n", r.direction, r.pattern, r.budget));
        }
        for r in &self.rcp {
            s.push_str(&format!("rcp {} {} {} {}\n", r.responder, r.initiator, r.q, r.delta));
        }
        for p in &self.icp {
            s.push_str(&format!(
                "icp {} {} {} {} {}\n",
                p.initiator, p.q_tot, p.delta_tot, p.chain_count, p.chain_len
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Direction;

    const SAMPLE: &str = "
# mail agent
receive *@company.com:email-agent 10
send    bob@example.com:calendar  20   # trailing comment
rcp alice@example.com:mail * 5 100
rcp alice@example.com:mail bob@example.com:calendar 2 10
icp alice@example.com:mail 6 100 2 3
";

    #[test]
    fn parses_all_line_kinds() {
        let p = PolicyFile::parse(SAMPLE).unwrap();
        assert_eq!(p.contact.rules.len(), 2);
        assert_eq!(p.contact.rules[0].direction, Direction::Receive);
        let me = Aid::parse("alice@example.com:mail").unwrap();
        let bob = Aid::parse("bob@example.com:calendar").unwrap();
        let carol = Aid::parse("carol@example.com:notes").unwrap();
        assert_eq!(p.rcp_for(&me, &bob).unwrap().q, 2);
        assert_eq!(p.rcp_for(&me, &carol).unwrap().q, 5);
        assert_eq!(p.icp_for(&me).unwrap().chain_len, 3);
        assert_eq!(PolicyFile::parse(&p.render()).unwrap(), p);
    }

    #[test]
    fn reports_line_numbers() {
        let err = PolicyFile::parse("receive * 3\nicp a@b:c 7 10 2 3\n").unwrap_err();
        assert!(matches!(err, PolicyError::Parse { line: 2, .. }), "{err}");
        assert!(matches!(PolicyFile::parse("bogus line"), Err(PolicyError::Parse { line: 1, .. })));
    }
}
