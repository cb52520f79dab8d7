//! Curriculum ordering by capability tier and difficulty, plus stagnation detection
//! for switching on self-verification.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{invalid, Result, StrategyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumTask {
    /// `1 - pass rate`.
    pub difficulty: f64,
    pub tier: String,
}

/// Ranks tiers topologically under `prerequisites` (`(before, after)` pairs). Tiers
/// free to go in either order keep their first-appearance order.
fn tier_ranks(tasks: &[CurriculumTask], prerequisites: &[(String, String)]) -> Result<BTreeMap<String, usize>> {
    let mut appearance: Vec<&str> = Vec::new();
    let names =
        tasks.iter().map(|t| t.tier.as_str()).chain(prerequisites.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]));
    for name in names {
        if !appearance.contains(&name) {
            appearance.push(name);
        }
    }
    let idx: BTreeMap<&str, usize> = appearance.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut indegree = vec![0usize; appearance.len()];
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); appearance.len()];
    for (a, b) in prerequisites {
        if succ[idx[a.as_str()]].insert(idx[b.as_str()]) {
            indegree[idx[b.as_str()]] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..appearance.len()).filter(|&i| indegree[i] == 0).collect();
    let mut ranks = BTreeMap::new();
    while let Some(i) = ready.pop_first() {
        ranks.insert(appearance[i].to_string(), ranks.len());
        for &j in &succ[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.insert(j);
            }
        }
    }
    if ranks.len() < appearance.len() {
        let stuck = (0..appearance.len()).find(|&i| indegree[i] > 0).expect("some tier is on a cycle");
        return Err(StrategyError::CyclicTiers(appearance[stuck].to_string()));
    }
    Ok(ranks)
}

/// Task indices ordered by tier rank, then ascending difficulty; ties keep input order.
pub fn curriculum_order(tasks: &[CurriculumTask], prerequisites: &[(String, String)]) -> Result<Vec<usize>> {
    if tasks.iter().any(|t| !t.difficulty.is_finite()) {
        return invalid("difficulties must be finite");
    }
    let ranks = tier_ranks(tasks, prerequisites)?;
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by(|&a, &b| {
        ranks[&tasks[a].tier].cmp(&ranks[&tasks[b].tier]).then(tasks[a].difficulty.total_cmp(&tasks[b].difficulty))
    });
    Ok(order)
}

/// True when the least-squares slope of the last `window` mean rewards is below
/// `slope_eps`. Histories shorter than the window never trigger.
pub fn self_verification_trigger(history: &[f64], window: usize, slope_eps: f64) -> Result<bool> {
    if window < 2 {
        return invalid("window must be at least 2");
    }
    if history.len() < window {
        return Ok(false);
    }
    let ys = &history[history.len() - window..];
    let n = window as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    Ok(sxy / sxx < slope_eps)
}

/// Reward for a self-verification turn: `(1 - w)` on the trajectory's own reward and
/// `w` on whether the verdict about that trajectory was right.
pub fn verification_reward(trajectory_reward: f64, verdict_correct: bool, weight: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&weight) {
        return invalid(format!("verification weight must lie in [0, 1], got {weight}"));
    }
    Ok((1.0 - weight) * trajectory_reward + weight * f64::from(u8::from(verdict_correct)))
}
