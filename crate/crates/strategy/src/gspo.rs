//! Sequence-level clipped policy objective with group-normalized advantages.

use serde::{Deserialize, Serialize};

use crate::{invalid, Result};

/// Floor on the group reward standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub reward: f64,
    /// Sum of token log-likelihoods under the behaviour policy.
    pub old_logp: f64,
    /// Sum of token log-likelihoods under the current policy.
    pub new_logp: f64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGroup {
    pub trajectories: Vec<Trajectory>,
}

/// `exp((new - old) / tokens)`: the length-normalized likelihood ratio of a sequence.
pub fn sequence_importance_ratio(new_logp_sum: f64, old_logp_sum: f64, token_count: u64) -> Result<f64> {
    if token_count == 0 {
        return invalid("token_count must be at least 1");
    }
    if !(new_logp_sum.is_finite() && old_logp_sum.is_finite()) {
        return invalid("log-likelihood sums must be finite");
    }
    Ok(((new_logp_sum - old_logp_sum) / token_count as f64).exp())
}

/// `(r - mean) / max(std, 1e-8)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return invalid(format!("advantages need a group of at least 2, got {}", rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return invalid("rewards must be finite");
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// One trajectory's clipped surrogate `min(s·A, clip(s, 1-ε, 1+ε)·A)`.
pub fn clipped_term(s: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = s.clamp(1.0 - epsilon, 1.0 + epsilon);
    (s * advantage).min(clipped * advantage)
}

/// Mean of clipped terms within each group, then mean over groups.
pub fn gspo_objective(groups: &[TrajectoryGroup], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    if groups.is_empty() {
        return invalid("no trajectory groups");
    }
    let mut total = 0.0;
    for g in groups {
        let rewards: Vec<f64> = g.trajectories.iter().map(|t| t.reward).collect();
        let adv = group_advantages(&rewards)?;
        let mut sum = 0.0;
        for (t, a) in g.trajectories.iter().zip(&adv) {
            let s = sequence_importance_ratio(t.new_logp, t.old_logp, t.tokens)?;
            sum += clipped_term(s, *a, epsilon);
        }
        total += sum / adv.len() as f64;
    }
    Ok(total / groups.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(reward: f64, log_ratio: f64, tokens: u64) -> Trajectory {
        Trajectory { reward, old_logp: -10.0, new_logp: -10.0 + log_ratio, tokens }
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(sequence_importance_ratio(-3.0, -3.0, 7).unwrap(), 1.0);
        let s = sequence_importance_ratio(5.0 * 2f64.ln(), 0.0, 5).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        let a = sequence_importance_ratio(-1.0, -1.3, 10).unwrap();
        let b = sequence_importance_ratio(-2.0, -2.6, 20).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(sequence_importance_ratio(0.0, 0.0, 0).is_err());
        assert!(sequence_importance_ratio(f64::NAN, 0.0, 1).is_err());
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[0.3; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(group_advantages(&[1.0, 0.0]).unwrap(), vec![1.0, -1.0]);
        assert!(group_advantages(&[1.0]).is_err());
    }

    #[test]
    fn clip_examples() {
        assert!((clipped_term(2.0, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
        // inside the trust region nothing is clipped
        assert_eq!(clipped_term(1.1, -2.0, 0.2), 1.1 * -2.0);
    }

    #[test]
    fn identity_policy_objective_is_zero() {
        let g = TrajectoryGroup { trajectories: vec![traj(1.0, 0.0, 5), traj(0.0, 0.0, 9), traj(0.5, 0.0, 2)] };
        assert!(gspo_objective(&[g], 0.2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let g = TrajectoryGroup { trajectories: vec![traj(1.0, 0.0, 5), traj(0.0, 0.0, 9)] };
        assert!(gspo_objective(std::slice::from_ref(&g), 0.0).is_err());
        assert!(gspo_objective(&[g], 1.0).is_err());
    }

    fn rewards() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, 2..32)
    }

    proptest! {
        #[test]
        fn advantages_are_zero_mean(r in rewards()) {
            let a = group_advantages(&r).unwrap();
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
        }

        #[test]
        fn advantages_shift_and_scale_invariant(r in rewards(), shift in -100.0f64..100.0, scale in 0.01f64..100.0) {
            let base = group_advantages(&r).unwrap();
            let spread = r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            let shifted: Vec<f64> = r.iter().map(|x| x + shift).collect();
            let scaled: Vec<f64> = r.iter().map(|x| x * scale).collect();
            for (x, y) in base.iter().zip(group_advantages(&shifted).unwrap()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            for (x, y) in base.iter().zip(group_advantages(&scaled).unwrap()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn contribution_is_bounded(s in 0.01f64..10.0, a in -5.0f64..5.0, eps in 0.01f64..0.99) {
            let c = clipped_term(s, a, eps);
            prop_assert!(c.abs() <= s.max(1.0 + eps) * a.abs() + 1e-12);
        }

        #[test]
        fn objective_length_invariant(r in rewards(), per_token in proptest::collection::vec(-0.1f64..0.1, 32), k in 2u64..8) {
            let make = |mult: u64| TrajectoryGroup {
                trajectories: r.iter().zip(&per_token).enumerate().map(|(i, (&rew, &lr))| {
                    let tokens = (i as u64 + 1) * mult;
                    traj(rew, lr * tokens as f64, tokens)
                }).collect(),
            };
            let a = gspo_objective(&[make(1)], 0.2).unwrap();
            let b = gspo_objective(&[make(k)], 0.2).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }
}
