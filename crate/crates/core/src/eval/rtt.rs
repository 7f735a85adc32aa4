//! Region-to-region round-trip times for the overhead models.
//!
//! The bundled table is synthetic. Load your own with [`RttTable::parse`].

use std::collections::BTreeMap;

use super::models::{parse_decimal, Exact};

pub const BUNDLED: &str = include_str!("../../data/rtt_regions.csv");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RttError {
    #[error("line {0}: {1}")]
    Line(usize, String),
    #[error("no rtt for {0} <-> {1}")]
    Missing(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RttTable {
    pairs: BTreeMap<(String, String), Exact>,
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl RttTable {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled table parses")
    }

    /// `from,to,rtt_ms` rows; `#` comments and the header line are skipped.
    pub fn parse(text: &str) -> Result<Self, RttError> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("from,") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let [a, b, ms] = cols[..] else {
                return Err(RttError::Line(i + 1, format!("expected 3 columns, got {}", cols.len())));
            };
            let v = parse_decimal(ms).map_err(|e| RttError::Line(i + 1, e.to_string()))?;
            if *v.numer() < 0 {
                return Err(RttError::Line(i + 1, "negative rtt".into()));
            }
            if pairs.insert(key(a, b), v).is_some() {
                return Err(RttError::Line(i + 1, format!("{a},{b} listed twice")));
            }
        }
        Ok(RttTable { pairs })
    }

    pub fn get(&self, a: &str, b: &str) -> Result<Exact, RttError> {
        self.pairs.get(&key(a, b)).copied().ok_or_else(|| RttError::Missing(a.into(), b.into()))
    }

    pub fn regions(&self) -> Vec<String> {
        let mut r: Vec<String> = self.pairs.keys().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        r.sort();
        r.dedup();
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_is_complete_and_symmetric() {
        let t = RttTable::bundled();
        let regions = t.regions();
        assert_eq!(regions.len(), 4);
        for a in &regions {
            for b in &regions {
                assert_eq!(t.get(a, b).unwrap(), t.get(b, a).unwrap());
            }
        }
        assert_eq!(t.get("asia", "us-east").unwrap(), Exact::from_integer(180));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(RttTable::parse("a,b"), Err(RttError::Line(1, _))));
        assert!(matches!(RttTable::parse("a,b,1\nb,a,2"), Err(RttError::Line(2, _))));
        assert!(RttTable::parse("a,b,-1").is_err());
        assert!(matches!(RttTable::parse("a,b,1").unwrap().get("a", "c"), Err(RttError::Missing(..))));
    }
}
