//! `build-envs`: environments with their tasks, checked before anything is written.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toolforge_core::rng::child;
use toolforge_core::task::audit_rubric;
use toolforge_core::{assemble_environment, generate_task, EnvError, Environment, Task, ToolGraph};

use crate::domains::load_domains;
use crate::output::{numbered_files, read_json, remove_numbered, require_dir, write_json};
use crate::{CliError, Result, RunConfig};

pub const DIR: &str = "envs";
pub const PREFIX: &str = "env_";

pub fn env_id(index: usize) -> String {
    format!("{PREFIX}{index:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleChecks {
    pub tools_included: usize,
    pub plan_len: usize,
    pub gold_executable: bool,
    pub rubric_sound: bool,
    pub required_ablations: usize,
    pub rejected_ablations: usize,
}

/// One environment with the domain it came from and its task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvBundle {
    pub id: String,
    pub domain_file: String,
    pub domain_index: usize,
    pub env_index_in_domain: usize,
    pub checks: BundleChecks,
    pub environment: Environment,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvsIndex {
    pub count: usize,
    pub domains: usize,
    pub min_tools_included: usize,
    pub all_executable: bool,
    pub all_rubrics_sound: bool,
}

fn env_error(e: EnvError) -> CliError {
    match e {
        EnvError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Invariant(other.to_string()),
    }
}

/// Builds and checks one environment. Seeds depend only on the run seed and the
/// global environment index.
pub fn build_bundle(
    config: &RunConfig,
    seed: u64,
    graph: &ToolGraph,
    domain_file: &str,
    d: usize,
    k: usize,
) -> Result<EnvBundle> {
    let index = d * config.envs.per_domain + k;
    let env =
        assemble_environment(graph, &config.envs.config, &mut child(seed, "env", index as u64)).map_err(env_error)?;
    let task = generate_task(&env, graph, &mut child(seed, "task", index as u64))
        .map_err(|e| CliError::Invariant(format!("{}: {e}", env_id(index))))?;
    let min_tools = if config.envs.config.strict_min_tools { config.envs.config.min_tools } else { 0 };
    let executable = env.check(graph, min_tools);
    let audit = audit_rubric(&task, &env, graph, config.envs.audit_trials);
    let checks = BundleChecks {
        tools_included: env.subgraph.included.len(),
        plan_len: env.plan_len(),
        gold_executable: executable.is_ok(),
        rubric_sound: audit.passed(),
        required_ablations: audit.required_ablations,
        rejected_ablations: audit.rejected_ablations,
    };
    if let Err(e) = executable {
        return Err(CliError::Invariant(format!("{}: {e}", env_id(index))));
    }
    if !checks.rubric_sound {
        return Err(CliError::Invariant(format!("{}: rubric audit failed: {audit:?}", env_id(index))));
    }
    Ok(EnvBundle {
        id: env_id(index),
        domain_file: domain_file.to_string(),
        domain_index: d,
        env_index_in_domain: k,
        checks,
        environment: env,
        task,
    })
}

/// Builds `envs.per_domain` environments for every generated domain.
pub fn build_envs(config: &RunConfig, seed: u64, out: &Path) -> Result<EnvsIndex> {
    config.validate()?;
    let domains = load_domains(out)?;
    let per = config.envs.per_domain;
    let jobs: Vec<(usize, usize)> = (0..domains.len()).flat_map(|d| (0..per).map(move |k| (d, k))).collect();
    let bundles: Vec<EnvBundle> = jobs
        .par_iter()
        .map(|&(d, k)| {
            let (path, g) = &domains[d];
            let file = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            build_bundle(config, seed, g, file, d, k)
        })
        .collect::<Result<_>>()?;

    let dir = out.join(DIR);
    remove_numbered(&dir, PREFIX)?;
    for b in &bundles {
        write_json(&dir.join(format!("{}.json", b.id)), b)?;
    }
    let index = EnvsIndex {
        count: bundles.len(),
        domains: domains.len(),
        min_tools_included: bundles.iter().map(|b| b.checks.tools_included).min().unwrap_or(0),
        all_executable: bundles.iter().all(|b| b.checks.gold_executable),
        all_rubrics_sound: bundles.iter().all(|b| b.checks.rubric_sound),
    };
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}

/// Loads every bundle in id order.
pub fn load_bundles(out: &Path) -> Result<Vec<EnvBundle>> {
    let dir = out.join(DIR);
    require_dir(&dir, "build-envs")?;
    numbered_files(&dir, PREFIX)?.par_iter().map(|p| read_json(p)).collect()
}
