//! Sample queue with version-lag admission control.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// A finished trajectory waiting for the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueuedSample {
    pub sample: usize,
    pub policy_version: u64,
    pub ready_at: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleQueueState {
    pub pending: VecDeque<QueuedSample>,
    pub current_version: u64,
    pub admitted: u64,
    pub rejected: u64,
}

/// Admits a sample iff `current_version - sample_version <= max_lag`, updating counters.
///
/// A sample stamped with a version newer than the trainer's has lag zero.
pub fn staleness_admit(queue: &mut SampleQueueState, sample_version: u64, current_version: u64, max_lag: u64) -> bool {
    let ok = current_version.saturating_sub(sample_version) <= max_lag;
    if ok {
        queue.admitted += 1;
    } else {
        queue.rejected += 1;
    }
    ok
}

impl SampleQueueState {
    pub fn push(&mut self, s: QueuedSample) {
        self.pending.push_back(s);
    }

    /// Screens pending samples in arrival order, dropping stale ones, and takes up to
    /// `batch` admitted samples only when at least `min_take` are available.
    pub fn take_batch(
        &mut self,
        batch: usize,
        min_take: usize,
        max_lag: u64,
    ) -> (Vec<QueuedSample>, Vec<QueuedSample>) {
        let version = self.current_version;
        let mut kept = VecDeque::with_capacity(self.pending.len());
        let mut stale = Vec::new();
        while let Some(s) = self.pending.pop_front() {
            if version.saturating_sub(s.policy_version) <= max_lag {
                kept.push_back(s);
            } else {
                self.rejected += 1;
                stale.push(s);
            }
        }
        self.pending = kept;
        if self.pending.len() < min_take.max(1) {
            return (Vec::new(), stale);
        }
        let n = batch.min(self.pending.len());
        let taken: Vec<QueuedSample> = self.pending.drain(..n).collect();
        self.admitted += taken.len() as u64;
        (taken, stale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let mut q = SampleQueueState::default();
        assert!(staleness_admit(&mut q, 4, 4, 0));
        assert!(!staleness_admit(&mut q, 3, 5, 1));
        assert_eq!((q.admitted, q.rejected), (1, 1));
    }

    proptest! {
        #[test]
        fn admission_matches_reference_filter(stream in proptest::collection::vec((0u64..20, 0u64..20), 0..200)) {
            let mut q = SampleQueueState::default();
            let got: Vec<bool> = stream.iter().map(|&(s, c)| staleness_admit(&mut q, s, c, 2)).collect();
            let want: Vec<bool> = stream.iter().map(|&(s, c)| c < s || c - s <= 2).collect();
            prop_assert_eq!(&got, &want);
            prop_assert_eq!(q.admitted as usize, want.iter().filter(|&&b| b).count());
            prop_assert_eq!(q.admitted + q.rejected, stream.len() as u64);
        }
    }

    #[test]
    fn take_batch_drops_stale_and_waits_for_enough() {
        let mut q = SampleQueueState { current_version: 5, ..SampleQueueState::default() };
        for (i, v) in [5u64, 2, 4, 5].into_iter().enumerate() {
            q.push(QueuedSample { sample: i, policy_version: v, ready_at: i as f64 });
        }
        let (taken, stale) = q.take_batch(4, 4, 1);
        assert!(taken.is_empty());
        assert_eq!(stale.iter().map(|s| s.sample).collect::<Vec<_>>(), vec![1]);
        let (taken, _) = q.take_batch(2, 2, 1);
        assert_eq!(taken.iter().map(|s| s.sample).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(q.pending.len(), 1);
    }
}
