//! Per-device KV-cache block accounting with LRU eviction to a host store.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Entry {
    resident: u64,
    host: u64,
    last_use: f64,
    active: bool,
}

/// KV blocks of one device, keyed by owning sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvStore {
    total: u64,
    used: u64,
    entries: BTreeMap<usize, Entry>,
}

/// Result of one watermark check.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SwapActions {
    /// `(owner, blocks)` moved to the host store, in eviction order.
    pub evicted: Vec<(usize, u64)>,
    pub blocks: u64,
    pub time: f64,
}

impl KvStore {
    pub fn new(total_blocks: u64) -> Self {
        assert!(total_blocks > 0, "a device needs at least one KV block");
        Self { total: total_blocks, used: 0, entries: BTreeMap::new() }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn usage(&self) -> f64 {
        self.used as f64 / self.total as f64
    }

    pub fn resident(&self, owner: usize) -> u64 {
        self.entries.get(&owner).map_or(0, |e| e.resident)
    }

    pub fn on_host(&self, owner: usize) -> u64 {
        self.entries.get(&owner).map_or(0, |e| e.host)
    }

    /// Blocks that could be evicted right now (owned by idle samples).
    pub fn idle_resident(&self) -> u64 {
        self.entries.values().filter(|e| !e.active).map(|e| e.resident).sum()
    }

    /// Pins (or unpins) an owner's blocks against eviction.
    pub fn set_active(&mut self, owner: usize, active: bool) {
        self.entries.entry(owner).or_default().active = active;
    }

    /// Marks an owner as just used for LRU ordering.
    pub fn touch(&mut self, owner: usize, now: f64) {
        self.entries.entry(owner).or_default().last_use = now;
    }

    /// Adds freshly computed blocks for `owner`.
    pub fn grow(&mut self, owner: usize, blocks: u64) {
        self.entries.entry(owner).or_default().resident += blocks;
        self.used += blocks;
    }

    /// Brings host-resident blocks back onto the device; returns how many moved.
    pub fn swap_in(&mut self, owner: usize) -> u64 {
        let Some(e) = self.entries.get_mut(&owner) else { return 0 };
        let n = e.host;
        e.host = 0;
        e.resident += n;
        self.used += n;
        n
    }

    /// Frees everything `owner` holds, on device and on host.
    pub fn release(&mut self, owner: usize) {
        if let Some(e) = self.entries.remove(&owner) {
            self.used -= e.resident;
        }
    }

    /// Without a host store: discards whole idle contexts, least recently used first,
    /// until `needed` more blocks fit. Returns the owners whose cache was lost.
    pub fn drop_until_fits(&mut self, needed: u64) -> Vec<usize> {
        let mut lost = Vec::new();
        while self.used + needed > self.total {
            let Some(owner) = self.lru_idle() else { break };
            let e = self.entries.get_mut(&owner).expect("lru owner exists");
            self.used -= e.resident;
            e.resident = 0;
            lost.push(owner);
        }
        lost
    }

    fn lru_idle(&self) -> Option<usize> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.active && e.resident > 0)
            .min_by(|a, b| a.1.last_use.total_cmp(&b.1.last_use).then(a.0.cmp(b.0)))
            .map(|(&k, _)| k)
    }
}

/// When usage (counting `pending_blocks` about to be allocated) is at or above the
/// watermark, moves least-recently-used idle blocks to the host store one at a time,
/// at `swap_cost` each, until usage drops below the watermark or nothing idle remains.
pub fn kv_swap_step(store: &mut KvStore, watermark: f64, pending_blocks: u64, swap_cost: f64) -> SwapActions {
    let mut out = SwapActions::default();
    let over = |s: &KvStore| (s.used + pending_blocks) as f64 / s.total as f64 >= watermark;
    while over(store) {
        let Some(owner) = store.lru_idle() else { break };
        let e = store.entries.get_mut(&owner).expect("lru owner exists");
        e.resident -= 1;
        e.host += 1;
        store.used -= 1;
        match out.evicted.last_mut() {
            Some((o, n)) if *o == owner => *n += 1,
            _ => out.evicted.push((owner, 1)),
        }
        out.blocks += 1;
    }
    out.time = out.blocks as f64 * swap_cost;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_store() -> KvStore {
        let mut s = KvStore::new(10);
        for (owner, t) in [(0, 3.0), (1, 1.0), (2, 2.0)] {
            s.touch(owner, t);
        }
        s.grow(0, 4);
        s.grow(1, 3);
        s.grow(2, 3);
        s
    }

    #[test]
    fn below_watermark_does_nothing() {
        let mut s = KvStore::new(10);
        s.grow(0, 5);
        let a = kv_swap_step(&mut s, 0.9, 0, 1.0);
        assert_eq!(a, SwapActions::default());
    }

    #[test]
    fn full_device_evicts_lru_until_under_watermark() {
        let mut s = full_store();
        assert_eq!(s.usage(), 1.0);
        let a = kv_swap_step(&mut s, 0.9, 0, 0.5);
        assert!(s.usage() < 0.9);
        assert_eq!(a.evicted, vec![(1, 2)]);
        assert_eq!(a.time, 1.0);
        assert_eq!(s.on_host(1), 2);
    }

    #[test]
    fn active_blocks_are_never_evicted() {
        let mut s = full_store();
        for o in 0..3 {
            s.set_active(o, true);
        }
        let a = kv_swap_step(&mut s, 0.5, 0, 1.0);
        assert_eq!(a.blocks, 0);
        assert_eq!(s.used(), 10);
    }

    #[test]
    fn swap_in_restores_blocks() {
        let mut s = full_store();
        kv_swap_step(&mut s, 0.5, 0, 1.0);
        let used = s.used();
        let back = s.swap_in(1);
        assert_eq!(back, 3);
        assert_eq!(s.used(), used + 3);
        assert_eq!(s.resident(1), 3);
    }

    #[test]
    fn dropping_loses_whole_contexts_in_lru_order() {
        let mut s = full_store();
        let lost = s.drop_until_fits(5);
        assert_eq!(lost, vec![1, 2]);
        assert_eq!(s.used(), 4);
    }
}
