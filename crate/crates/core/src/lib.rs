//! Budget-enforced agent-to-agent sessions.
//!
//! A Provider registers users and agents, checks contact policies and hands
//! out signed authorization tokens. Agents then run A-sessions whose message
//! budgets are enforced by personalized hash chains committed under user
//! signatures, and orchestrators spread a global budget over several
//! responders in C-sessions. Everything runs over a deterministic simulated
//! network with a scriptable adversary.

pub mod asession;
pub mod crypto;
pub mod csession;
pub mod encoding;
pub mod eval;
pub mod netsim;
pub mod pki;
pub mod policy;
pub mod provider;
pub mod testbed;
