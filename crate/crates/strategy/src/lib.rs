//! Training-side math: GSPO objective and group advantages, rollout budget
//! allocation, curricula, stagnation detection, perplexity-based data selection and
//! power-law hyperparameter prediction. Everything here is a pure function.

pub mod budget;
pub mod curriculum;
pub mod export;
pub mod gspo;
pub mod scaling;
pub mod selection;

use thiserror::Error;

pub use budget::{
    allocate_budget, harmonic_utility, oversampling_coefficient, task_value, TaskValueState, ValueWeights,
};
pub use curriculum::{curriculum_order, self_verification_trigger, verification_reward, CurriculumTask};
pub use export::{write_allocation_csv, write_schedule_csv};
pub use gspo::{group_advantages, gspo_objective, sequence_importance_ratio, Trajectory, TrajectoryGroup};
pub use scaling::{
    fit_hparam_laws, fit_power_law, predict_optimal_hparams, HparamLaws, HparamPoint, HparamPrediction, PowerLaw,
};
pub use selection::{kcg_select, sliding_window_ppl};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),
    #[error("capability tiers contain a cycle through {0}")]
    CyclicTiers(String),
    #[error("csv export failed: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, StrategyError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(StrategyError::InvalidInput(msg.into()))
}
