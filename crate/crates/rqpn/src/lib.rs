//! Files, configuration, tracing, self-checks and the `rqpn` command line
//! on top of `rqpn-core`.

pub mod cli;
pub mod config;
pub mod files;
pub mod trace;
pub mod verify;

pub use rqpn_core as core;
