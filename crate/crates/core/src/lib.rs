//! Hierarchical portfolio allocation.
//!
//! Base RL agents read monthly market-metric or sentiment observations and
//! propose long-only weights; per-modality meta-agents and a super-agent
//! (three-layer softmax networks trained by lookahead imitation) merge
//! those proposals; a walk-forward backtester scores every tier against
//! equal-weight and index benchmarks.

pub mod agents;
pub mod allocator;
pub mod config;
pub mod backtest;
pub mod data;
pub mod env;
pub mod error;
pub mod exec;
pub mod features;
pub mod hierarchy;
pub mod market;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod sentiment;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Exec;
