//! Files, checkpoints, training runs and benchmark tables on top of
//! `hevrp-core`. The `hevrp` binary exposes all of it as subcommands.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod io;
pub mod training;
