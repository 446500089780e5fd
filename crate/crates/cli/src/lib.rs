//! Config-driven orchestration of the attack simulation pipeline and the
//! post-hoc report/verify commands. The binary in `main.rs` is a thin
//! clap wrapper over this library.

pub mod config;
pub mod pipeline;
pub mod report;

use std::fmt;

/// CLI-level failure. `Config` maps to exit code 2, `Stage` to 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Stage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Stage(msg) => write!(f, "stage failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}
