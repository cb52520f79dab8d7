//! `simulate`: rollout simulation in sync, async or both modes.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toolforge_core::rng::derive_seed;
use toolforge_sim::{run_simulation_logged, Mode, SimError, SimMetrics, SimOutput};

use crate::output::{write_atomic, write_json};
use crate::{CliError, Result, RunConfig, SimMode};

pub const DIR: &str = "sim";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: SimMode,
    pub seed: u64,
    pub runs: BTreeMap<String, SimMetrics>,
    /// Async over sync samples per second, in compare mode.
    pub speedup: Option<f64>,
}

pub fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Sync => "sync",
        Mode::Async => "async",
    }
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::InvalidConfig(m) => CliError::Config(m),
        SimError::CapacityInfeasible(m) => CliError::Infeasible(m),
    }
}

/// Runs the configured simulation; `mode` overrides the config's.
pub fn simulate(config: &RunConfig, seed: u64, mode: SimMode, out: &Path) -> Result<SimReport> {
    config.validate()?;
    let sim = &config.simulation;
    let sim_seed = derive_seed(seed, "simulation", 0);
    let outputs: Vec<(Mode, SimOutput)> = mode
        .modes()
        .into_par_iter()
        .map(|m| run_simulation_logged(&sim.cluster, &sim.workload, m, sim_seed).map(|o| (m, o)).map_err(sim_error))
        .collect::<Result<_>>()?;

    let dir = out.join(DIR);
    let mut runs = BTreeMap::new();
    for (m, o) in &outputs {
        write_atomic(&dir.join(format!("events_{}.jsonl", mode_name(*m))), o.events_jsonl().as_bytes())?;
        runs.insert(mode_name(*m).to_string(), o.metrics.clone());
    }
    let speedup = match (runs.get("sync"), runs.get("async")) {
        (Some(s), Some(a)) if s.samples_per_sec > 0.0 => Some(a.samples_per_sec / s.samples_per_sec),
        _ => None,
    };
    let report = SimReport { mode, seed: sim_seed, runs, speedup };
    write_json(&dir.join("sim_metrics.json"), &report)?;
    Ok(report)
}
