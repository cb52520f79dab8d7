//! `run-episodes`: the (environment, skill, noise level) grid, and the noise curriculum.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use toolforge_core::episode::{run_episode_with, RewardReport, Termination, Trajectory};
use toolforge_core::noise::{
    curriculum_step, inject_instruction_noise, robustness_gap, CurriculumState, NoiseInjector, NoiseMode, NoiseProfile,
};
use toolforge_core::rng::{child, derive_seed};
use toolforge_core::{ScriptedSolver, ToolGraph};

use crate::domains::load_domains;
use crate::envs::{load_bundles, EnvBundle};
use crate::output::{io_err, write_atomic, write_csv, write_json};
use crate::{CliError, Result, RunConfig};

pub const DIR: &str = "episodes";

/// Noise levels of the grid with the clean level first.
pub fn grid_levels(config: &RunConfig) -> Vec<u32> {
    let mut levels = config.episodes.noise_levels.clone();
    levels.push(0);
    levels.sort_unstable();
    levels.dedup();
    levels
}

#[derive(Debug, Clone)]
struct Outcome {
    env: usize,
    skill: usize,
    level: usize,
    episode: usize,
    report: RewardReport,
    trajectory: Option<Trajectory>,
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Completed => "completed",
        Termination::TurnLimit => "turn_limit",
        Termination::TokenLimit => "token_limit",
        Termination::GaveUp => "gave_up",
    }
}

/// One episode. The task noise and episode stream depend on (env, level, episode)
/// but not on skill, so skill values are compared on common random numbers.
#[allow(clippy::too_many_arguments)]
fn play(
    config: &RunConfig,
    graph: &ToolGraph,
    bundle: &EnvBundle,
    solver: &ScriptedSolver,
    profile: &NoiseProfile,
    label: &str,
    seed: u64,
    stream: u64,
) -> (Trajectory, RewardReport) {
    let mut rng = child(seed, label, stream);
    let task = inject_instruction_noise(&bundle.task, profile.instruction_level, &mut rng);
    let injector = NoiseInjector::new(profile.clone(), NoiseMode::Random);
    let ep = &config.episodes;
    run_episode_with(&bundle.environment, graph, &task, solver, injector, &ep.context, &ep.limits, &ep.costs, &mut rng)
}

fn graphs_by_file(out: &Path) -> Result<BTreeMap<String, ToolGraph>> {
    Ok(load_domains(out)?
        .into_iter()
        .map(|(p, g)| (p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(), g))
        .collect())
}

fn graph_for<'a>(graphs: &'a BTreeMap<String, ToolGraph>, b: &EnvBundle) -> Result<&'a ToolGraph> {
    graphs.get(&b.domain_file).ok_or_else(|| CliError::Config(format!("{} refers to missing {}", b.id, b.domain_file)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumStep {
    pub level: u32,
    pub clean_pass: f64,
    pub noisy_pass: f64,
    pub gap: f64,
    pub promoted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumLog {
    pub skill: f64,
    pub steps: Vec<CurriculumStep>,
    pub state: CurriculumState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodesSummary {
    pub envs: usize,
    pub episodes: usize,
    pub curriculum: CurriculumLog,
}

pub fn run_episodes(config: &RunConfig, seed: u64, out: &Path) -> Result<EpisodesSummary> {
    config.validate()?;
    let bundles = load_bundles(out)?;
    let graphs = graphs_by_file(out)?;
    let ep = &config.episodes;
    let levels = grid_levels(config);
    let (n_env, n_skill, n_level, n_ep) = (bundles.len(), ep.skills.len(), levels.len(), ep.episodes_per_cell);

    let mut jobs = Vec::with_capacity(n_env * n_skill * n_level * n_ep);
    for e in 0..n_env {
        for s in 0..n_skill {
            for l in 0..n_level {
                for k in 0..n_ep {
                    jobs.push((e, s, l, k));
                }
            }
        }
    }
    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|&(e, s, l, k)| {
            let b = &bundles[e];
            let g = graph_for(&graphs, b)?;
            let solver = ScriptedSolver { skill: ep.skills[s], ..ep.solver.clone() };
            let stream = ((e * n_level + l) * n_ep + k) as u64;
            let (traj, report) =
                play(config, g, b, &solver, &NoiseProfile::uniform(levels[l]), "episode", seed, stream);
            let trajectory = (k < ep.logged_per_cell).then_some(traj);
            Ok(Outcome { env: e, skill: s, level: l, episode: k, report, trajectory })
        })
        .collect::<Result<_>>()?;

    let dir = out.join(DIR);
    write_rewards(&dir, config, &bundles, &levels, &outcomes)?;
    write_pass_rates(&dir, config, &bundles, &levels, &outcomes)?;
    write_trajectories(&dir, config, &bundles, &levels, &outcomes)?;

    let curriculum = run_curriculum(config, seed, &bundles, &graphs)?;
    write_json(&dir.join("curriculum.json"), &curriculum)?;
    Ok(EpisodesSummary { envs: n_env, episodes: outcomes.len(), curriculum })
}

fn write_rewards(
    dir: &Path,
    config: &RunConfig,
    bundles: &[EnvBundle],
    levels: &[u32],
    outcomes: &[Outcome],
) -> Result<()> {
    let rows = outcomes.iter().map(|o| {
        vec![
            bundles[o.env].id.clone(),
            config.episodes.skills[o.skill].to_string(),
            levels[o.level].to_string(),
            o.episode.to_string(),
            o.report.reward.to_string(),
            o.report.predicates_satisfied.to_string(),
            o.report.predicates_total.to_string(),
            o.report.turns.to_string(),
            o.report.tokens.to_string(),
            termination_name(o.report.termination).to_string(),
        ]
    });
    let header = [
        "env",
        "skill",
        "noise_level",
        "episode",
        "reward",
        "predicates_satisfied",
        "predicates_total",
        "turns",
        "tokens",
        "termination",
    ];
    write_csv(&dir.join("rewards.csv"), &header, rows)
}

fn rate(passes: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        passes as f64 / n as f64
    }
}

/// Per-cell and aggregate pass rates. The robustness gap compares each level with
/// the clean level of the same skill (and environment, for per-cell rows).
fn write_pass_rates(
    dir: &Path,
    config: &RunConfig,
    bundles: &[EnvBundle],
    levels: &[u32],
    outcomes: &[Outcome],
) -> Result<()> {
    let (n_skill, n_level) = (config.episodes.skills.len(), levels.len());
    let mut cell = vec![(0usize, 0usize); bundles.len() * n_skill * n_level];
    let mut agg = vec![(0usize, 0usize); n_skill * n_level];
    for o in outcomes {
        let pass = usize::from(o.report.reward == 1);
        let c = &mut cell[(o.env * n_skill + o.skill) * n_level + o.level];
        c.0 += pass;
        c.1 += 1;
        let a = &mut agg[o.skill * n_level + o.level];
        a.0 += pass;
        a.1 += 1;
    }
    let mut rows = Vec::new();
    if config.episodes.episodes_per_cell > 0 {
        for (e, b) in bundles.iter().enumerate() {
            for s in 0..n_skill {
                let base = (e * n_skill + s) * n_level;
                let clean = rate(cell[base].0, cell[base].1);
                for (l, level) in levels.iter().enumerate() {
                    let (p, n) = cell[base + l];
                    let r = rate(p, n);
                    rows.push(vec![
                        b.id.clone(),
                        config.episodes.skills[s].to_string(),
                        level.to_string(),
                        n.to_string(),
                        p.to_string(),
                        r.to_string(),
                        robustness_gap(clean, r).to_string(),
                    ]);
                }
            }
        }
    }
    let header = ["env", "skill", "noise_level", "episodes", "passes", "pass_rate", "robustness_gap"];
    write_csv(&dir.join("pass_rates.csv"), &header, rows)?;

    let mut rows = Vec::new();
    if !outcomes.is_empty() {
        for s in 0..n_skill {
            let clean = rate(agg[s * n_level].0, agg[s * n_level].1);
            for (l, level) in levels.iter().enumerate() {
                let (p, n) = agg[s * n_level + l];
                let r = rate(p, n);
                rows.push(vec![
                    config.episodes.skills[s].to_string(),
                    level.to_string(),
                    n.to_string(),
                    p.to_string(),
                    r.to_string(),
                    robustness_gap(clean, r).to_string(),
                ]);
            }
        }
    }
    let header = ["skill", "noise_level", "episodes", "passes", "pass_rate", "robustness_gap"];
    write_csv(&dir.join("pass_matrix.csv"), &header, rows)
}

fn write_trajectories(
    dir: &Path,
    config: &RunConfig,
    bundles: &[EnvBundle],
    levels: &[u32],
    outcomes: &[Outcome],
) -> Result<()> {
    let path = dir.join("trajectories.jsonl");
    let mut text = String::new();
    for o in outcomes {
        let Some(traj) = &o.trajectory else { continue };
        let line = json!({
            "env": bundles[o.env].id,
            "skill": config.episodes.skills[o.skill],
            "noise_level": levels[o.level],
            "episode": o.episode,
            "report": o.report,
            "trajectory": traj,
        });
        text.push_str(&serde_json::to_string(&line).map_err(|e| io_err(&path, e))?);
        text.push('\n');
    }
    write_atomic(&path, text.as_bytes())
}

/// Escalates noise while the robustness gap stays within the threshold. Each
/// environment's noisy profile is the highest solvable one at or below the level.
fn run_curriculum(
    config: &RunConfig,
    seed: u64,
    bundles: &[EnvBundle],
    graphs: &BTreeMap<String, ToolGraph>,
) -> Result<CurriculumLog> {
    let c = &config.curriculum;
    let solver = ScriptedSolver { skill: c.skill, ..config.episodes.solver.clone() };
    let mut state = CurriculumState::new(c.start_level, c.promotion_threshold);
    let mut steps = Vec::new();
    let n = bundles.len() * c.episodes_per_env;
    if n == 0 {
        return Ok(CurriculumLog { skill: c.skill, steps, state });
    }
    for step in 0..c.steps {
        let results: Vec<(usize, usize)> = (0..n)
            .into_par_iter()
            .map(|j| {
                let b = &bundles[j / c.episodes_per_env];
                let g = graph_for(graphs, b)?;
                let stream = derive_seed(step as u64, "step", j as u64);
                let clean = play(config, g, b, &solver, &NoiseProfile::clean(), "curriculum", seed, stream).1.reward;
                let profile = state
                    .emit_profile(&b.environment, g, &b.task, solver.retry_budget)
                    .unwrap_or_else(NoiseProfile::clean);
                let noisy = play(config, g, b, &solver, &profile, "curriculum-noisy", seed, stream).1.reward;
                Ok((usize::from(clean == 1), usize::from(noisy == 1)))
            })
            .collect::<Result<_>>()?;
        let clean_pass = rate(results.iter().map(|r| r.0).sum(), n);
        let noisy_pass = rate(results.iter().map(|r| r.1).sum(), n);
        let next = curriculum_step(&state, clean_pass, noisy_pass).map_err(|e| CliError::Invariant(e.to_string()))?;
        steps.push(CurriculumStep {
            level: state.current_level,
            clean_pass,
            noisy_pass,
            gap: robustness_gap(clean_pass, noisy_pass),
            promoted: next.current_level > state.current_level,
        });
        state = next;
    }
    Ok(CurriculumLog { skill: c.skill, steps, state })
}
