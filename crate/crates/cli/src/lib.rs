//! Library surface of the `ebf` binary: config parsing, run orchestration,
//! and report emission. The binary is a thin clap wrapper over these modules;
//! the acceptance suite drives them directly.

pub mod config;
pub mod kernels_cli;
pub mod orchestrate;
pub mod planexpr;
pub mod report;
