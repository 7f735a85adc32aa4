//! Overhead models, micro-benchmarks, bandwidth accounting and the
//! scripted attack matrix.

pub mod attack;
pub mod bandwidth;
pub mod bench;
pub mod models;
pub mod rtt;
