//! `analyze`: training-strategy views of an episode batch.
//!
//! Task values come from the outcomes at one skill level and drive the rollout budget
//! and oversampling coefficients. The curriculum orders environments by capability
//! tier (gold plan length) and difficulty. Coreset selection scores each
//! environment by the windowed perplexity of its outcome stream under the
//! population pass rate and spreads picks over structural features.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toolforge_strategy::{
    allocate_budget, curriculum_order, fit_hparam_laws, group_advantages, kcg_select, oversampling_coefficient,
    predict_optimal_hparams, sliding_window_ppl, write_allocation_csv, write_schedule_csv, CurriculumTask, HparamLaws,
    HparamPrediction, StrategyError, TaskValueState,
};

use crate::envs::{load_bundles, EnvBundle};
use crate::output::{io_err, require_dir, write_atomic, write_csv, write_json};
use crate::{episodes, CliError, Result, RunConfig};

pub const DIR: &str = "analysis";
pub const TIERS: [&str; 3] = ["basic", "planning", "autonomy"];

#[derive(Debug, Clone, Deserialize)]
struct RewardRow {
    env: String,
    skill: f64,
    reward: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HparamSection {
    pub laws: HparamLaws,
    pub prediction: Option<HparamPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub skill: f64,
    pub tasks: usize,
    pub total_rollouts: u32,
    pub mean_value: f64,
    /// Environments whose outcomes at this skill are not all equal.
    pub informative_groups: usize,
    pub mean_abs_advantage: f64,
    pub tier_counts: BTreeMap<String, usize>,
    pub selected: Vec<String>,
    pub hparams: Option<HparamSection>,
}

fn strategy_err(e: StrategyError) -> CliError {
    CliError::Config(e.to_string())
}

/// Capability tier from the gold plan length.
pub fn tier_of(bundle: &EnvBundle) -> &'static str {
    match bundle.checks.plan_len {
        0..=9 => TIERS[0],
        10..=14 => TIERS[1],
        _ => TIERS[2],
    }
}

fn read_rewards(path: &Path, skill: f64) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut by_env: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in reader.deserialize::<RewardRow>() {
        let row = row.map_err(|e| CliError::Invariant(format!("{}: {e}", path.display())))?;
        if row.skill == skill {
            by_env.entry(row.env).or_default().push(f64::from(row.reward));
        }
    }
    Ok(by_env)
}

/// Outcome surprisal under the population pass rate `p`, Laplace-smoothed.
fn outcome_nlls(outcomes: &[f64], p: f64) -> Vec<f64> {
    outcomes.iter().map(|&r| if r > 0.5 { -p.ln() } else { -(1.0 - p).ln() }).collect()
}

fn standardize(columns: &mut [Vec<f64>]) {
    let n = columns.len();
    if n == 0 {
        return;
    }
    for d in 0..columns[0].len() {
        let mean = columns.iter().map(|c| c[d]).sum::<f64>() / n as f64;
        let std = (columns.iter().map(|c| (c[d] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for c in columns.iter_mut() {
            c[d] = if std > 0.0 { (c[d] - mean) / std } else { 0.0 };
        }
    }
}

pub fn analyze(config: &RunConfig, out: &Path) -> Result<AnalysisReport> {
    config.validate()?;
    let a = &config.analysis;
    if !config.episodes.skills.contains(&a.skill) {
        return Err(CliError::Config(format!("analysis.skill {} is not in the episode skill grid", a.skill)));
    }
    let bundles = load_bundles(out)?;
    let ep_dir = out.join(episodes::DIR);
    require_dir(&ep_dir, "run-episodes")?;
    let rewards = read_rewards(&ep_dir.join("rewards.csv"), a.skill)?;
    let dir = out.join(DIR);

    let ids: Vec<String> = bundles.iter().map(|b| b.id.clone()).collect();
    let outcomes: Vec<Vec<f64>> = ids.iter().map(|id| rewards.get(id).cloned().unwrap_or_default()).collect();
    let mut states = Vec::with_capacity(ids.len());
    for (id, obs) in ids.iter().zip(&outcomes) {
        let mut st = TaskValueState::new(id.clone());
        for &r in obs {
            st.observe(r, &a.value_weights).map_err(strategy_err)?;
        }
        st.value = toolforge_strategy::task_value(&st, &a.value_weights);
        states.push(st);
    }
    let values: Vec<f64> = states.iter().map(|s| s.value).collect();

    let n = ids.len() as u32;
    let total = (a.rollouts_per_task * n).clamp(a.min_rollouts * n, a.max_rollouts * n);
    let alloc = allocate_budget(&values, total, a.min_rollouts, a.max_rollouts).map_err(strategy_err)?;
    let mut buf = Vec::new();
    write_allocation_csv(&mut buf, &ids, &values, &alloc).map_err(strategy_err)?;
    write_atomic(&dir.join("budget.csv"), &buf)?;

    let mut over_rows = Vec::with_capacity(states.len());
    for s in &states {
        let k = oversampling_coefficient(s.pass_rate, a.k_max).map_err(strategy_err)?;
        over_rows.push(vec![s.task_id.clone(), s.pass_rate.to_string(), s.attempts.to_string(), k.to_string()]);
    }
    write_csv(&dir.join("oversampling.csv"), &["task_id", "pass_rate", "attempts", "coefficient"], over_rows)?;

    let tasks: Vec<CurriculumTask> = bundles
        .iter()
        .zip(&states)
        .map(|(b, s)| CurriculumTask { difficulty: 1.0 - s.pass_rate, tier: tier_of(b).to_string() })
        .collect();
    let prerequisites: Vec<(String, String)> = TIERS.windows(2).map(|w| (w[0].to_string(), w[1].to_string())).collect();
    let order = curriculum_order(&tasks, &prerequisites).map_err(strategy_err)?;
    let mut buf = Vec::new();
    write_schedule_csv(&mut buf, &tasks, &order).map_err(strategy_err)?;
    write_atomic(&dir.join("schedule.csv"), &buf)?;

    let all: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let population = (all.iter().sum::<f64>() + 1.0) / (all.len() as f64 + 2.0);
    let mut ppl = Vec::with_capacity(ids.len());
    for obs in &outcomes {
        let nll = outcome_nlls(obs, population);
        ppl.push(if nll.is_empty() { 1.0 } else { sliding_window_ppl(&nll, a.ppl_window).map_err(strategy_err)? });
    }
    let mut features: Vec<Vec<f64>> = bundles
        .iter()
        .zip(&states)
        .map(|(b, s)| {
            vec![b.checks.plan_len as f64, b.checks.tools_included as f64, b.environment.complexity, 1.0 - s.pass_rate]
        })
        .collect();
    standardize(&mut features);
    let k =
        if ids.is_empty() { 0 } else { ((a.select_fraction * ids.len() as f64).ceil() as usize).clamp(1, ids.len()) };
    let picked = kcg_select(&features, &ppl, k).map_err(strategy_err)?;
    let mut rank = vec![String::new(); ids.len()];
    for (r, &i) in picked.iter().enumerate() {
        rank[i] = r.to_string();
    }
    let sel_rows = ids.iter().enumerate().map(|(i, id)| vec![id.clone(), ppl[i].to_string(), rank[i].clone()]);
    write_csv(&dir.join("selection.csv"), &["task_id", "window_ppl", "selected_rank"], sel_rows)?;

    let mut informative = 0;
    let mut abs_sum = 0.0;
    let mut abs_n = 0usize;
    for obs in outcomes.iter().filter(|o| o.len() >= 2) {
        let adv = group_advantages(obs).map_err(strategy_err)?;
        if adv.iter().any(|x| *x != 0.0) {
            informative += 1;
        }
        abs_sum += adv.iter().map(|x| x.abs()).sum::<f64>();
        abs_n += adv.len();
    }

    let hparams = if a.hparam_points.is_empty() {
        None
    } else {
        let laws = fit_hparam_laws(&a.hparam_points).map_err(strategy_err)?;
        let prediction = match (a.checkpoint_loss, a.checkpoint_compute) {
            (Some(l), Some(c)) => Some(predict_optimal_hparams(l, c, &laws).map_err(strategy_err)?),
            _ => None,
        };
        Some(HparamSection { laws, prediction })
    };

    let mut tier_counts = BTreeMap::new();
    for t in &tasks {
        *tier_counts.entry(t.tier.clone()).or_insert(0) += 1;
    }
    let report = AnalysisReport {
        skill: a.skill,
        tasks: ids.len(),
        total_rollouts: total,
        mean_value: if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 },
        informative_groups: informative,
        mean_abs_advantage: if abs_n == 0 { 0.0 } else { abs_sum / abs_n as f64 },
        tier_counts,
        selected: picked.iter().map(|&i| ids[i].clone()).collect(),
        hparams,
    };
    write_json(&dir.join("analysis.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surprisal_of_outcomes() {
        let nll = outcome_nlls(&[1.0, 0.0], 0.25);
        assert!((nll[0] - 4f64.ln()).abs() < 1e-12);
        assert!((nll[1] - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn standardize_centres_columns() {
        let mut cols = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        standardize(&mut cols);
        assert_eq!(cols, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    }
}
