//! The run configuration: one TOML document covering every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toolforge_core::context::ContextPolicy;
use toolforge_core::episode::CostModel as EpisodeCosts;
use toolforge_core::noise::MAX_LEVEL;
use toolforge_core::{DomainGenConfig, EnvConfig, EpisodeLimits, ScriptedSolver};
use toolforge_sim::{ClusterConfig, Mode, WorkloadModel};
use toolforge_strategy::{HparamPoint, ValueWeights};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Required unless `--seed` is given.
    pub seed: Option<u64>,
    pub domains: DomainsSection,
    pub envs: EnvsSection,
    pub episodes: EpisodesSection,
    pub curriculum: CurriculumSection,
    pub simulation: SimulationSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainsSection {
    pub count: usize,
    /// Domain `i` uses style `gen.style + i`.
    pub gen: DomainGenConfig,
}

impl Default for DomainsSection {
    fn default() -> Self {
        Self { count: 20, gen: DomainGenConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvsSection {
    pub per_domain: usize,
    pub config: EnvConfig,
    /// Gold replays per rubric audit.
    pub audit_trials: usize,
}

impl Default for EnvsSection {
    fn default() -> Self {
        Self { per_domain: 5, config: EnvConfig::default(), audit_trials: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodesSection {
    pub skills: Vec<f64>,
    pub noise_levels: Vec<u32>,
    pub episodes_per_cell: usize,
    /// Episodes per cell whose full trajectory is logged.
    pub logged_per_cell: usize,
    /// Base solver; `skill` is replaced by each grid value.
    pub solver: ScriptedSolver,
    pub limits: EpisodeLimits,
    pub context: ContextPolicy,
    pub costs: EpisodeCosts,
}

impl Default for EpisodesSection {
    fn default() -> Self {
        Self {
            skills: vec![0.0, 0.5, 1.0],
            noise_levels: vec![0, 2, 4],
            episodes_per_cell: 4,
            logged_per_cell: 1,
            solver: ScriptedSolver { clarification_rate: 1.0, ..ScriptedSolver::default() },
            limits: EpisodeLimits::default(),
            context: ContextPolicy::default(),
            costs: EpisodeCosts::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSection {
    pub steps: usize,
    pub start_level: u32,
    pub promotion_threshold: f64,
    pub skill: f64,
    pub episodes_per_env: usize,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self { steps: 4, start_level: 0, promotion_threshold: 0.1, skill: 0.9, episodes_per_env: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Sync,
    Async,
    Compare,
}

impl SimMode {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            SimMode::Sync => vec![Mode::Sync],
            SimMode::Async => vec![Mode::Async],
            SimMode::Compare => vec![Mode::Sync, Mode::Async],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub mode: SimMode,
    pub cluster: ClusterConfig,
    pub workload: WorkloadModel,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { mode: SimMode::Compare, cluster: ClusterConfig::default(), workload: WorkloadModel::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Skill column whose outcomes drive task values.
    pub skill: f64,
    pub value_weights: ValueWeights,
    /// Rollouts per task on average.
    pub rollouts_per_task: u32,
    pub min_rollouts: u32,
    pub max_rollouts: u32,
    pub k_max: u32,
    pub ppl_window: usize,
    /// Fraction of tasks kept by the coreset selection.
    pub select_fraction: f64,
    pub clip_epsilon: f64,
    /// (compute, batch size, learning rate, loss) sweep results; empty skips the fit.
    pub hparam_points: Vec<HparamPoint>,
    pub checkpoint_loss: Option<f64>,
    pub checkpoint_compute: Option<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            skill: 0.5,
            value_weights: ValueWeights::default(),
            rollouts_per_task: 8,
            min_rollouts: 2,
            max_rollouts: 32,
            k_max: 8,
            ppl_window: 512,
            select_fraction: 0.25,
            clip_epsilon: 0.2,
            hparam_points: Vec::new(),
            checkpoint_loss: None,
            checkpoint_compute: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The effective seed: the override if given, else the config's.
    pub fn resolve_seed(&mut self, cli_seed: Option<u64>) -> Result<u64, CliError> {
        if cli_seed.is_some() {
            self.seed = cli_seed;
        }
        self.seed.ok_or_else(|| CliError::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| Err(CliError::Config(m));
        self.domains.gen.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.envs.config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.envs.audit_trials < 2 {
            return cfg("envs.audit_trials must be at least 2".into());
        }
        let ep = &self.episodes;
        if let Some(s) = ep.skills.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return cfg(format!("episode skills must lie in [0, 1], got {s}"));
        }
        if let Some(l) = ep.noise_levels.iter().find(|&&l| l > MAX_LEVEL) {
            return cfg(format!("noise levels must be at most {MAX_LEVEL}, got {l}"));
        }
        ep.solver.validate().map_err(CliError::Config)?;
        ep.context.validate().map_err(CliError::Config)?;
        let c = &self.curriculum;
        if !(0.0..=1.0).contains(&c.skill) || !(0.0..=1.0).contains(&c.promotion_threshold) {
            return cfg("curriculum skill and promotion_threshold must lie in [0, 1]".into());
        }
        self.simulation.cluster.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.simulation.workload.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let a = &self.analysis;
        if !(0.0..=1.0).contains(&a.skill) {
            return cfg(format!("analysis.skill must lie in [0, 1], got {}", a.skill));
        }
        if a.min_rollouts > a.max_rollouts || a.k_max == 0 || a.ppl_window == 0 {
            return cfg("analysis needs min_rollouts <= max_rollouts and positive k_max, ppl_window".into());
        }
        if !(a.select_fraction > 0.0 && a.select_fraction <= 1.0) {
            return cfg("analysis.select_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }
}
