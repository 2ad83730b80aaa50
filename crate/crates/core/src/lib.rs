//! Simulation core for heterogeneity-aware decentralized federated learning:
//! bandit-driven inter-edge topology construction, importance-aware model
//! aggregation and a per-round energy ledger.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command line
//! live in the `hatdfed` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod aggregation;
pub mod bandit;
pub mod config;
pub mod data;
pub mod energy;
pub mod learner;
pub mod math;
pub mod oracles;
pub mod orchestrator;
pub mod rng;

pub use config::{ConfigError, LinkId, SimConfig, TopologyMatrix};
pub use orchestrator::{run_simulation, run_simulation_with, run_with_rules, AggregationRule, TopologyRule, Executor, RunOutput, RunSummary, Sequential, SimError, Strategy};
