//! IO companion to the protocol core: wire framing, config files, role
//! runners, deterministic simulation, toy training tasks, and the
//! benchmark harness.

pub mod bench;
pub mod config;
pub mod runner;
pub mod sim;
pub mod training;
pub mod wire;
