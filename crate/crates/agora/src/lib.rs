//! Std side of the agora system: trace and report file formats, key
//! storage, the node agent, the collector service, and the emulator that
//! wires them together.

pub mod cli;
pub mod collector;
pub mod config;
pub mod disk_store;
pub mod emulate;
pub mod error;
pub mod journal;
pub mod keys;
pub mod node;
pub mod report;
pub mod trace_io;

pub use error::{AgoraError, Result};
