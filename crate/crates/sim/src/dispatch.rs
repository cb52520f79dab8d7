//! Weighted round-robin over domains with per-domain oversampling ratios.
//!
//! One cycle of `sum` dispatches is split into `min` frames of length at most
//! `ceil(sum / min)`. Every domain owns one anchor slot at a fixed offset in each
//! frame, so consecutive anchors are never further apart than a frame; the remaining
//! `ratio - min` services per domain fill the leftover slots by smooth weighted
//! round-robin. Each cycle serves every domain exactly its ratio.

use serde::{Deserialize, Serialize};

use crate::SimError;

/// Fractional ratios are resolved to this many parts per unit.
const RATIO_RESOLUTION: f64 = 1000.0;
const MAX_CYCLE: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchState {
    weights: Vec<u64>,
    cycle: Vec<usize>,
    cursor: usize,
}

impl DispatchState {
    pub fn new(ratios: &[f64]) -> Result<Self, SimError> {
        if ratios.is_empty() || ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(SimError::InvalidConfig(format!("oversampling ratios must be positive, got {ratios:?}")));
        }
        let weights = integer_weights(ratios)?;
        let cycle = build_cycle(&weights);
        Ok(Self { weights, cycle, cursor: 0 })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Integer weights after scaling and reduction; one cycle is their sum.
    pub fn weights(&self) -> &[u64] {
        &self.weights
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn integer_weights(ratios: &[f64]) -> Result<Vec<u64>, SimError> {
    let integral = ratios.iter().all(|r| r.fract() == 0.0);
    let scale = if integral { 1.0 } else { RATIO_RESOLUTION };
    let raw: Vec<u64> = ratios.iter().map(|r| (r * scale).round() as u64).collect();
    if raw.contains(&0) {
        return Err(SimError::InvalidConfig(format!("oversampling ratios {ratios:?} are too small to resolve")));
    }
    let g = raw.iter().copied().fold(0, gcd);
    let weights: Vec<u64> = raw.iter().map(|w| w / g).collect();
    if weights.iter().sum::<u64>() > MAX_CYCLE {
        return Err(SimError::InvalidConfig(format!("oversampling ratios {ratios:?} need too long a cycle")));
    }
    Ok(weights)
}

fn build_cycle(weights: &[u64]) -> Vec<usize> {
    let k = weights.len() as u64;
    let sum: u64 = weights.iter().sum();
    let min = *weights.iter().min().expect("non-empty");
    let extra: Vec<i64> = weights.iter().map(|w| (w - min) as i64).collect();
    let extra_total: i64 = extra.iter().sum();
    let mut credit = vec![0i64; weights.len()];
    let mut cycle = Vec::with_capacity(sum as usize);
    for j in 0..min {
        // frames have length floor or ceil of sum/min, always >= k since every weight >= min
        let len = (j + 1) * sum / min - j * sum / min;
        cycle.extend(0..weights.len());
        for _ in k..len {
            for (c, e) in credit.iter_mut().zip(&extra) {
                *c += e;
            }
            let best = (0..credit.len()).fold(0, |b, i| if credit[i] > credit[b] { i } else { b });
            credit[best] -= extra_total;
            cycle.push(best);
        }
    }
    cycle
}

/// Returns the next domain index.
pub fn domain_oversample_dispatch(state: &mut DispatchState) -> usize {
    let d = state.cycle[state.cursor];
    state.cursor = (state.cursor + 1) % state.cycle.len();
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(ratios: &[f64], n: usize) -> Vec<usize> {
        let mut s = DispatchState::new(ratios).unwrap();
        (0..n).map(|_| domain_oversample_dispatch(&mut s)).collect()
    }

    #[test]
    fn equal_ratios_alternate() {
        assert_eq!(run(&[1.0, 1.0], 6), vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn three_to_one_frequency() {
        let picks = run(&[3.0, 1.0], 4_000);
        let a = picks.iter().filter(|&&p| p == 0).count() as f64 / 4_000.0;
        assert!((a - 0.75).abs() <= 0.01, "{a}");
    }

    #[test]
    fn fractional_ratios_reduce_to_integers() {
        let s = DispatchState::new(&[1.5, 0.5]).unwrap();
        assert_eq!(s.weights(), &[3, 1]);
        assert_eq!(run(&[0.25, 0.25], 4), vec![0, 1, 0, 1]);
    }

    #[test]
    fn minority_domain_is_spaced_at_frame_length() {
        // plain smooth round-robin gives domain 0 a gap of 5 here
        let picks = run(&[2.0, 3.0, 3.0], 16);
        assert_eq!(&picks[..8], &[0, 1, 2, 1, 0, 1, 2, 2]);
        assert_eq!(&picks[8..], &picks[..8]);
    }

    #[test]
    fn rejects_nonpositive_ratios() {
        assert!(DispatchState::new(&[1.0, 0.0]).is_err());
        assert!(DispatchState::new(&[]).is_err());
    }

    proptest! {
        #[test]
        fn gaps_are_bounded(ratios in proptest::collection::vec(1u32..10, 1..6)) {
            let r: Vec<f64> = ratios.iter().map(|&x| f64::from(x)).collect();
            let sum: u32 = ratios.iter().sum();
            let min = *ratios.iter().min().unwrap();
            let bound = sum.div_ceil(min) as usize;
            let n = 20 * sum as usize;
            let picks = run(&r, n);
            for (d, &ratio) in ratios.iter().enumerate() {
                let at: Vec<usize> = picks.iter().enumerate().filter(|(_, &p)| p == d).map(|(i, _)| i).collect();
                prop_assert!(!at.is_empty());
                prop_assert!(at[0] < bound);
                for w in at.windows(2) {
                    prop_assert!(w[1] - w[0] <= bound, "domain {} gap {} > {}", d, w[1] - w[0], bound);
                }
                // each full cycle serves a domain exactly its ratio times
                prop_assert_eq!(at.len(), 20 * ratio as usize);
            }
        }
    }
}
