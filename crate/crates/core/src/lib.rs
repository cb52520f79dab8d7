//! Procedural tool-use environments: domain graphs, environment scaling, tasks
//! with rubrics, scripted episodes, noise injection and context management.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod context;
pub mod domain;
pub mod env;
pub mod episode;
pub mod exec;
pub mod noise;
pub mod rng;
pub mod schema;
pub mod styles;
pub mod task;

pub use chain::{GroundedChain, ToolChain};
pub use domain::{generate_domain, validate_toolset, DomainError, DomainGenConfig, ToolGraph, ValidationReport};
pub use env::{assemble_environment, EnvConfig, EnvError, Environment};
pub use episode::{run_episode, EpisodeLimits, RewardReport, ScriptedSolver, Trajectory};
pub use exec::{execute_tool, ToolCall, ToolResult, ToolStatus};
pub use schema::{DatabaseState, DomainSchema, Value};
pub use task::{generate_task, validate_rubric, Rubric, Task};
