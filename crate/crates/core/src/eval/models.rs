//! Closed-form overhead models, evaluated in exact rational arithmetic.
//!
//! All times are milliseconds, lifetimes are minutes.

use num_integer::Integer;
use num_rational::Ratio;
use thiserror::Error;

pub type Exact = Ratio<i128>;

pub const MINUTES_PER_DAY: i128 = 1440;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} must not be negative")]
    Negative(&'static str),
    #[error("lifetime must lie in [1, 1440] minutes, got {0}")]
    Lifetime(String),
    #[error("not a decimal number: {0:?}")]
    Decimal(String),
}

/// Measured per-A-session crypto cost on the initiating side.
pub fn session_crypto_ms() -> Exact {
    Exact::new(2033, 100)
}

/// Measured Provider cost of one contact resolution.
pub fn provider_resolution_ms() -> Exact {
    Exact::new(296, 100)
}

/// Initiator's share of contact resolution.
pub fn initiator_resolution_ms() -> Exact {
    Exact::new(41, 10)
}

/// Initiator's share of the handshake.
pub fn initiator_handshake_ms() -> Exact {
    Exact::new(401, 100)
}

/// Parses a plain decimal such as `20.33`, `7` or `.5` without rounding.
pub fn parse_decimal(s: &str) -> Result<Exact, ModelError> {
    let bad = || ModelError::Decimal(s.to_string());
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let numer: i128 = digits.parse().map_err(|_| bad())?;
    let denom = 10i128.pow(frac.len() as u32);
    let v = Exact::new(numer, denom);
    Ok(if neg { -v } else { v })
}

/// Decimal rendering: exact if the expansion ends within `max_places`,
/// otherwise rounded half away from zero at `max_places`.
pub fn format_decimal(x: &Exact, max_places: u32) -> String {
    let neg = *x.numer() < 0;
    let (n, d) = (x.numer().abs(), *x.denom());
    let scale = 10i128.pow(max_places);
    let (q, r) = (n * scale).div_rem(&d);
    let scaled = if r * 2 >= d { q + 1 } else { q };
    let int = scaled / scale;
    let mut frac = format!("{:0width$}", scaled % scale, width = max_places as usize);
    while frac.ends_with('0') {
        frac.pop();
    }
    let sign = if neg && scaled != 0 { "-" } else { "" };
    if frac.is_empty() {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}

fn positive(v: u64, what: &'static str) -> Result<i128, ModelError> {
    if v == 0 {
        return Err(ModelError::NonPositive(what));
    }
    Ok(v as i128)
}

fn non_negative(v: &Exact, what: &'static str) -> Result<(), ModelError> {
    if *v.numer() < 0 {
        return Err(ModelError::Negative(what));
    }
    Ok(())
}

fn lifetime_ok(l: &Exact) -> Result<(), ModelError> {
    if *l < Exact::from_integer(1) || *l > Exact::from_integer(MINUTES_PER_DAY) {
        return Err(ModelError::Lifetime(format_decimal(l, 6)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtoInput {
    pub m: u64,
    pub q_max: u64,
    pub rtt: Exact,
    pub t_crypto: Exact,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtoCost {
    /// Authorization cycles, `ceil(m / q_max)`.
    pub cycles: u64,
    pub total: Exact,
    pub amortized: Exact,
}

/// `(rtt + t_crypto) * ceil(m / q_max)`, and that divided by `m`.
pub fn proto_overhead(input: &ProtoInput) -> Result<ProtoCost, ModelError> {
    let m = positive(input.m, "m")?;
    let q = positive(input.q_max, "q_max")?;
    non_negative(&input.rtt, "rtt")?;
    non_negative(&input.t_crypto, "t_crypto")?;
    let cycles = Integer::div_ceil(&m, &q);
    let total = (input.rtt + input.t_crypto) * Exact::from_integer(cycles);
    Ok(ProtoCost { cycles: cycles as u64, amortized: total / Exact::from_integer(m), total })
}

/// Provider time per day for `n` initiators refreshing sessions every
/// `lifetime` minutes: `n * 1440 / lifetime * t_crypto`.
pub fn provider_overhead(n: u64, lifetime: &Exact, t_crypto: &Exact) -> Result<Exact, ModelError> {
    let n = positive(n, "n")?;
    lifetime_ok(lifetime)?;
    non_negative(t_crypto, "t_crypto")?;
    Ok(Exact::from_integer(n * MINUTES_PER_DAY) / lifetime * t_crypto)
}

/// Orchestrator cost of opening one session with each of `t` responders.
pub fn initiator_session_cost(t: u64) -> Result<Exact, ModelError> {
    let t = Exact::from_integer(positive(t, "t")?);
    Ok(initiator_resolution_ms() * t + initiator_handshake_ms() * t)
}

/// Orchestrator time per day when every session lives `lifetime` minutes.
pub fn initiator_overhead(t: u64, lifetime: &Exact) -> Result<Exact, ModelError> {
    lifetime_ok(lifetime)?;
    Ok(initiator_session_cost(t)? * Exact::from_integer(MINUTES_PER_DAY) / lifetime)
}

/// Lifetimes used for the sweeps, one minute to one day.
pub const LIFETIME_SWEEP: [i128; 10] = [1, 5, 15, 30, 60, 120, 240, 480, 720, 1440];

pub fn proto_csv(rows: &[(String, ProtoInput)]) -> Result<String, ModelError> {
    let mut s = String::from("label,m,q_max,rtt_ms,t_crypto_ms,cycles,total_ms,amortized_ms\n");
    for (label, input) in rows {
        let c = proto_overhead(input)?;
        s.push_str(&format!(
            "{label},{},{},{},{},{},{},{}\n",
            input.m,
            input.q_max,
            format_decimal(&input.rtt, 6),
            format_decimal(&input.t_crypto, 6),
            c.cycles,
            format_decimal(&c.total, 6),
            format_decimal(&c.amortized, 6)
        ));
    }
    Ok(s)
}

pub fn provider_csv(ns: &[u64], lifetimes: &[Exact], t_crypto: &Exact) -> Result<String, ModelError> {
    let mut s = String::from("n_agents,lifetime_min,t_crypto_ms,ms_per_day\n");
    for &n in ns {
        for l in lifetimes {
            let v = provider_overhead(n, l, t_crypto)?;
            s.push_str(&format!("{n},{},{},{}\n", format_decimal(l, 6), format_decimal(t_crypto, 6), format_decimal(&v, 6)));
        }
    }
    Ok(s)
}

pub fn initiator_csv(ts: &[u64], lifetimes: &[Exact]) -> Result<String, ModelError> {
    let mut s = String::from("t,lifetime_min,c_init_ms,ms_per_day,s_per_day\n");
    for &t in ts {
        for l in lifetimes {
            let v = initiator_overhead(t, l)?;
            s.push_str(&format!(
                "{t},{},{},{},{}\n",
                format_decimal(l, 6),
                format_decimal(&initiator_session_cost(t)?, 6),
                format_decimal(&v, 6),
                format_decimal(&(v / Exact::from_integer(1000)), 6)
            ));
        }
    }
    Ok(s)
}
