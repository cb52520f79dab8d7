//! The `toolforge` pipeline: domain generation, environment building, episode
//! batches, rollout simulation, training-strategy analyses and the run report.
//!
//! Every stage reads and writes files under one output directory, so stages can run
//! one at a time or all together through [`pipeline`].

pub mod analyze;
pub mod config;
pub mod domains;
pub mod envs;
pub mod episodes;
pub mod output;
pub mod report;
pub mod simulate;

use std::path::Path;

use thiserror::Error;

pub use config::{RunConfig, SimMode};

/// A failure with a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or missing configuration, or a missing input directory.
    #[error("config error: {0}")]
    Config(String),
    /// A generated artifact violates its invariants.
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("capacity infeasible: {0}")]
    Infeasible(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Runs every stage in order into `out`.
pub fn pipeline(config: &RunConfig, seed: u64, mode: SimMode, out: &Path) -> Result<()> {
    domains::gen_domains(config, seed, out)?;
    envs::build_envs(config, seed, out)?;
    episodes::run_episodes(config, seed, out)?;
    simulate::simulate(config, seed, mode, out)?;
    analyze::analyze(config, out)?;
    report::report(out)?;
    Ok(())
}
