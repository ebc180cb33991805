//! Safe reinforcement learning from hierarchical task specifications.
//!
//! A task written in the requirement language ([`dsl`]) compiles into a
//! constrained MDP ([`cmdp`]) with a sparse target reward and binary safety
//! costs, optionally densified by a hierarchical potential ([`hprs`]).
//! Policies ([`policy`]) are improved by gated routines ([`spi`]) that only
//! release a candidate when a high-confidence off-policy bound ([`hcope`])
//! says its costs do not exceed the release thresholds.
//!
//! The crate is `no_std` (with `alloc`); enable the `std` feature for
//! `std::error::Error` integration.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod cmdp;
pub mod dsl;
pub mod env;
pub mod hcope;
pub mod hprs;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod semantics;
pub mod spi;
pub mod stats;

pub use dsl::{parse_task, TaskSpec};
