//! Heterogeneous electric vehicle routing with time windows.
//!
//! This crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: the problem model, the routing MDP, a small reverse-mode
//! tensor engine, the attention policy, REINFORCE training and the
//! non-neural reference solvers. File formats, the CLI and the benchmark
//! harness live in the `hevrp` crate.
//!
//! Enable the `parallel` feature to run rollouts on a rayon pool.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baselines;
pub mod env;
pub mod instance;
pub mod nn;
pub mod numcore;
pub mod policy;
pub mod stats;
pub mod train;

mod util;

pub use env::{EnvFlags, RolloutState, Solution, Verdict};
pub use instance::{Instance, NodeKind, NodeRecord, Vehicle};
pub use policy::{DecodeMode, PolicyConfig, PolicyParams};
