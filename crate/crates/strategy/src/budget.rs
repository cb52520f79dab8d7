//! Task values and rollout budgeting.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::{invalid, Result, StrategyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskValueState {
    pub task_id: String,
    /// Running mean of observed pass outcomes.
    pub pass_rate: f64,
    pub attempts: u64,
    /// Last computed value.
    pub value: f64,
}

impl TaskValueState {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self { task_id: task_id.into(), pass_rate: 0.0, attempts: 0, value: 0.0 }
    }

    /// Folds in one outcome in [0, 1] and refreshes `value`.
    pub fn observe(&mut self, outcome: f64, weights: &ValueWeights) -> Result<()> {
        if !(0.0..=1.0).contains(&outcome) {
            return invalid(format!("outcome must lie in [0, 1], got {outcome}"));
        }
        self.attempts += 1;
        self.pass_rate += (outcome - self.pass_rate) / self.attempts as f64;
        self.value = task_value(self, weights);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueWeights {
    /// Tasks with fewer attempts than this get the bonus.
    pub warmup_attempts: u64,
    pub warmup_bonus: f64,
}

impl Default for ValueWeights {
    fn default() -> Self {
        Self { warmup_attempts: 4, warmup_bonus: 0.5 }
    }
}

/// `4p(1-p)`, plus the warm-up bonus while the task is under-sampled.
pub fn task_value(state: &TaskValueState, weights: &ValueWeights) -> f64 {
    let p = state.pass_rate.clamp(0.0, 1.0);
    let bonus = if state.attempts < weights.warmup_attempts { weights.warmup_bonus } else { 0.0 };
    4.0 * p * (1.0 - p) + bonus
}

/// `v · H(n)`, the utility the allocator maximizes.
pub fn harmonic_utility(values: &[f64], alloc: &[u32]) -> f64 {
    values.iter().zip(alloc).map(|(v, &n)| v * (1..=n).map(|k| 1.0 / f64::from(k)).sum::<f64>()).sum()
}

struct Grant {
    marginal: f64,
    task: usize,
}

impl PartialEq for Grant {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Grant {}
impl PartialOrd for Grant {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Grant {
    // highest marginal first, lowest task index on ties
    fn cmp(&self, other: &Self) -> Ordering {
        self.marginal.total_cmp(&other.marginal).then(other.task.cmp(&self.task))
    }
}

/// Starts every task at `per_task_min` and hands out the rest one rollout at a time
/// to the task whose next rollout adds the most value (`v / (n + 1)`).
pub fn allocate_budget(values: &[f64], total: u32, per_task_min: u32, per_task_max: u32) -> Result<Vec<u32>> {
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return invalid("task values must be finite and nonnegative");
    }
    let n = values.len() as u64;
    let (lo, hi) = (n * u64::from(per_task_min), n * u64::from(per_task_max));
    if per_task_min > per_task_max || u64::from(total) < lo || u64::from(total) > hi {
        return Err(StrategyError::InfeasibleBudget(format!(
            "{total} rollouts cannot be split over {n} tasks within [{per_task_min}, {per_task_max}] each"
        )));
    }
    let mut alloc = vec![per_task_min; values.len()];
    let mut heap: BinaryHeap<Grant> = values
        .iter()
        .enumerate()
        .filter(|_| per_task_min < per_task_max)
        .map(|(task, v)| Grant { marginal: v / f64::from(per_task_min + 1), task })
        .collect();
    for _ in lo..u64::from(total) {
        let g = heap.pop().expect("capacity checked above");
        alloc[g.task] += 1;
        let n = alloc[g.task];
        if n < per_task_max {
            heap.push(Grant { marginal: values[g.task] / f64::from(n + 1), task: g.task });
        }
    }
    Ok(alloc)
}

/// `clamp(ceil(k_max · (1 - p)), 1, k_max)`: more duplicate groups for harder tasks.
pub fn oversampling_coefficient(pass_rate: f64, k_max: u32) -> Result<u32> {
    if !(0.0..=1.0).contains(&pass_rate) {
        return invalid(format!("pass rate must lie in [0, 1], got {pass_rate}"));
    }
    if k_max == 0 {
        return invalid("k_max must be positive");
    }
    let k = (f64::from(k_max) * (1.0 - pass_rate)).ceil() as u32;
    Ok(k.clamp(1, k_max))
}
