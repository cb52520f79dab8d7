//! The discrete-event loop.
//!
//! A sample alternates generation turns on one pinned device with environment steps
//! on a shared worker pool, then a reward step, then waits in the sample queue for the
//! trainer. Sync mode adds barriers after every phase of a batch and pauses generation
//! while the trainer runs; async mode streams samples individually and keeps several
//! policy versions in flight, bounded by the version-lag gate.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ClusterConfig, Mode, PdMode, SampleSpec, WorkloadModel};
use crate::kv::{kv_swap_step, KvStore};
use crate::load::{request_load_ratio, two_phase_caps, OccupancyTrace};
use crate::pd::pd_transfer_schedule;
use crate::queue::{QueuedSample, SampleQueueState};
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: f64,
    pub entity: String,
    pub event: String,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub mode: Mode,
    pub makespan: f64,
    pub samples_per_sec: f64,
    pub request_load_ratio: f64,
    pub mean_staleness: f64,
    pub max_staleness: u64,
    /// Trained samples per domain name.
    pub per_domain: BTreeMap<String, u64>,
    pub kv_recomputations: u64,
    pub kv_swapped_blocks: u64,
    pub transfer_overlap_ratio: f64,
    pub generated: u64,
    pub trained: u64,
    pub rejected_stale: u64,
    pub in_flight_end: u64,
    pub train_steps: u64,
    pub final_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub metrics: SimMetrics,
    pub events: Vec<SimEvent>,
    /// Version lag of every trained sample, in training order.
    pub staleness: Vec<u64>,
    pub occupancy: OccupancyTrace,
}

impl SimOutput {
    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

/// Runs one simulation and returns its metrics.
pub fn run_simulation(
    cluster: &ClusterConfig,
    workload: &WorkloadModel,
    mode: Mode,
    seed: u64,
) -> Result<SimMetrics, SimError> {
    let samples = workload.generate(seed)?;
    Ok(simulate_samples(cluster, &samples, &domain_names(workload), mode, false)?.metrics)
}

/// Like [`run_simulation`], also returning the event log and occupancy trace.
pub fn run_simulation_logged(
    cluster: &ClusterConfig,
    workload: &WorkloadModel,
    mode: Mode,
    seed: u64,
) -> Result<SimOutput, SimError> {
    let samples = workload.generate(seed)?;
    simulate_samples(cluster, &samples, &domain_names(workload), mode, true)
}

fn domain_names(w: &WorkloadModel) -> Vec<String> {
    w.domains.iter().map(|d| d.name.clone()).collect()
}

/// Simulates an explicit list of samples.
pub fn simulate_samples(
    cluster: &ClusterConfig,
    samples: &[SampleSpec],
    domains: &[String],
    mode: Mode,
    log: bool,
) -> Result<SimOutput, SimError> {
    cluster.validate()?;
    if samples.is_empty() {
        return Err(SimError::InvalidConfig("no samples to simulate".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.turns.is_empty() || s.domain >= domains.len() {
            return Err(SimError::InvalidConfig(format!("sample {i} needs at least one turn and a known domain")));
        }
    }
    let max_blocks = samples.iter().map(|s| cluster.blocks(s.max_context())).max().unwrap_or(0);
    if max_blocks > cluster.kv_blocks_per_device {
        return Err(SimError::CapacityInfeasible(format!(
            "a single sample needs {max_blocks} KV blocks but a device holds {}",
            cluster.kv_blocks_per_device
        )));
    }
    let lossless = cluster.cpu_swap.enabled || cluster.model_recompute;
    if !lossless && u64::from(cluster.initial_capacity) * max_blocks > cluster.kv_blocks_per_device {
        return Err(SimError::CapacityInfeasible(format!(
            "{} concurrent samples of {max_blocks} blocks exceed {} blocks with swapping and recomputation disabled",
            cluster.initial_capacity, cluster.kv_blocks_per_device
        )));
    }
    let mut sim = Sim::new(cluster, samples, domains, mode, log);
    sim.run()?;
    Ok(sim.finish())
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    GenDone(usize),
    PrefillDone(usize),
    KvArrive(usize),
    EnvDone(usize),
    RewardDone(usize),
    TrainDone,
}

struct Item {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Item {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Item {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

struct Device {
    active: u32,
    kv: KvStore,
    waitq: VecDeque<usize>,
    pinned: u32,
    elastic: bool,
}

#[derive(Default, Clone)]
struct SampleState {
    version: u64,
    device: usize,
    turn: usize,
    needs_recompute: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Gen,
    Env,
    Reward,
}

struct Sim<'a> {
    cfg: &'a ClusterConfig,
    samples: &'a [SampleSpec],
    domains: &'a [String],
    mode: Mode,
    now: f64,
    seq: u64,
    heap: BinaryHeap<Item>,
    devices: Vec<Device>,
    n_gen: usize,
    prefill_active: Vec<u32>,
    prefill_q: VecDeque<usize>,
    env_busy: u32,
    env_q: VecDeque<usize>,
    st: Vec<SampleState>,
    queue: SampleQueueState,
    trainer_busy: bool,
    started: usize,
    completed: usize,
    trained: u64,
    staleness: Vec<u64>,
    per_domain: BTreeMap<String, u64>,
    recomputations: u64,
    swapped: u64,
    transfer_time: f64,
    overlapped: f64,
    train_steps: u64,
    makespan: f64,
    gen_end: f64,
    trace: OccupancyTrace,
    log: Option<Vec<SimEvent>>,
    // sync bookkeeping
    phase: Phase,
    phase_pending: usize,
    members: Vec<usize>,
    live: Vec<usize>,
    overflow: Option<String>,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ClusterConfig, samples: &'a [SampleSpec], domains: &'a [String], mode: Mode, log: bool) -> Self {
        let n_gen = cfg.generation_devices() as usize;
        let elastic = if mode == Mode::Async { cfg.elastic_devices as usize } else { 0 };
        let devices = (0..n_gen + elastic)
            .map(|i| Device {
                active: 0,
                kv: KvStore::new(cfg.kv_blocks_per_device),
                waitq: VecDeque::new(),
                pinned: 0,
                elastic: i >= n_gen,
            })
            .collect();
        let prefill = match cfg.pd_mode {
            PdMode::Colocated => 0,
            PdMode::Disaggregated { prefill_devices, .. } => prefill_devices as usize,
        };
        Self {
            cfg,
            samples,
            domains,
            mode,
            now: 0.0,
            seq: 0,
            heap: BinaryHeap::new(),
            devices,
            n_gen,
            prefill_active: vec![0; prefill],
            prefill_q: VecDeque::new(),
            env_busy: 0,
            env_q: VecDeque::new(),
            st: vec![SampleState::default(); samples.len()],
            queue: SampleQueueState::default(),
            trainer_busy: false,
            started: 0,
            completed: 0,
            trained: 0,
            staleness: Vec::new(),
            per_domain: domains.iter().map(|d| (d.clone(), 0)).collect(),
            recomputations: 0,
            swapped: 0,
            transfer_time: 0.0,
            overlapped: 0.0,
            train_steps: 0,
            makespan: 0.0,
            gen_end: 0.0,
            trace: OccupancyTrace::new(n_gen, 0.0),
            log: log.then(Vec::new),
            phase: Phase::Gen,
            phase_pending: 0,
            members: Vec::new(),
            live: Vec::new(),
            overflow: None,
        }
    }

    fn emit(&mut self, entity: impl Into<String>, event: &str, payload: Value) {
        let time = self.now;
        if let Some(log) = self.log.as_mut() {
            log.push(SimEvent { time, entity: entity.into(), event: event.into(), payload });
        }
    }

    fn schedule(&mut self, at: f64, ev: Ev) {
        debug_assert!(at >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.heap.push(Item { time: at, seq: self.seq, ev });
    }

    fn cap(&self) -> u32 {
        two_phase_caps(self.now, self.cfg.first_balance_time, self.cfg.initial_capacity, self.cfg.device_capacity)
    }

    fn run(&mut self) -> Result<(), SimError> {
        match self.mode {
            Mode::Async => self.start_samples(),
            Mode::Sync => self.start_batch(),
        }
        while let Some(item) = self.heap.pop() {
            self.now = item.time;
            match item.ev {
                Ev::GenDone(s) => self.on_gen_done(s),
                Ev::PrefillDone(p) => {
                    self.prefill_active[p] -= 1;
                    self.try_prefill();
                }
                Ev::KvArrive(s) => {
                    let d = self.st[s].device;
                    self.devices[d].waitq.push_back(s);
                    self.try_admit(d);
                }
                Ev::EnvDone(s) => self.on_env_done(s),
                Ev::RewardDone(s) => self.on_reward_done(s),
                Ev::TrainDone => self.on_train_done(),
            }
            if let Some(msg) = self.overflow.take() {
                return Err(SimError::CapacityInfeasible(msg));
            }
        }
        Ok(())
    }

    // ---- sample lifecycle ----

    fn start_sample(&mut self, s: usize) {
        let d = self.choose_device();
        self.st[s] = SampleState { version: self.queue.current_version, device: d, turn: 0, needs_recompute: false };
        self.devices[d].pinned += 1;
        self.started += 1;
        let v = self.queue.current_version;
        self.emit(
            format!("sample:{s}"),
            "start",
            json!({ "device": d, "version": v, "domain": self.domains[self.samples[s].domain] }),
        );
        self.request_generation(s);
    }

    fn choose_device(&self) -> usize {
        let elastic_ok = self.mode == Mode::Async && !self.trainer_busy;
        (0..self.devices.len())
            .filter(|&i| !self.devices[i].elastic || elastic_ok)
            .min_by_key(|&i| (self.devices[i].pinned, self.devices[i].active, i))
            .expect("at least one generation device")
    }

    fn request_generation(&mut self, s: usize) {
        match self.cfg.pd_mode {
            PdMode::Colocated => {
                let d = self.st[s].device;
                self.devices[d].waitq.push_back(s);
                self.try_admit(d);
            }
            PdMode::Disaggregated { .. } => {
                let d = self.st[s].device;
                self.devices[d].kv.set_active(s, true);
                self.prefill_q.push_back(s);
                self.try_prefill();
            }
        }
    }

    /// Tokens to prefill for the sample's current turn, including a rebuild of a lost cache.
    fn prefill_tokens(&mut self, s: usize) -> u64 {
        let t = self.st[s].turn;
        let spec = &self.samples[s];
        let mut tokens = spec.input_tokens(t);
        if self.st[s].needs_recompute {
            let lost = if t > 0 { spec.context_after(t - 1) } else { 0 };
            tokens += lost;
            self.st[s].needs_recompute = false;
            self.recomputations += 1;
            self.emit(format!("sample:{s}"), "recompute", json!({ "turn": t, "tokens": lost }));
        }
        tokens
    }

    fn try_prefill(&mut self) {
        let PdMode::Disaggregated { chunk_size, link_rate, decode_start, .. } = self.cfg.pd_mode else { return };
        let cap = self.cap();
        while let Some(&s) = self.prefill_q.front() {
            let Some(p) = (0..self.prefill_active.len())
                .filter(|&p| self.prefill_active[p] < cap)
                .min_by_key(|&p| (self.prefill_active[p], p))
            else {
                break;
            };
            self.prefill_q.pop_front();
            let tokens = self.prefill_tokens(s);
            let tl =
                pd_transfer_schedule(tokens, chunk_size, link_rate, self.cfg.costs.prefill_per_token, decode_start);
            self.transfer_time += tl.transfer_time;
            self.overlapped += tl.overlapped_time;
            self.prefill_active[p] += 1;
            let compute_end = tl.chunks.last().map_or(0.0, |c| c.compute.1);
            self.emit(
                format!("sample:{s}"),
                "prefill_start",
                json!({ "turn": self.st[s].turn, "prefill_device": p, "tokens": tokens }),
            );
            self.schedule(self.now + compute_end, Ev::PrefillDone(p));
            self.schedule(self.now + tl.decode_start, Ev::KvArrive(s));
        }
    }

    fn try_admit(&mut self, d: usize) {
        let colocated = matches!(self.cfg.pd_mode, PdMode::Colocated);
        let swap = self.cfg.cpu_swap;
        while let Some(&s) = self.devices[d].waitq.front() {
            if self.devices[d].active >= self.cap() {
                break;
            }
            let t = self.st[s].turn;
            let target = self.cfg.blocks(self.samples[s].context_after(t));
            let dev = &mut self.devices[d];
            dev.kv.set_active(s, true);
            let need = target.saturating_sub(dev.kv.resident(s));
            let mut extra = 0.0;
            if swap.enabled {
                let acts = kv_swap_step(&mut dev.kv, swap.watermark, need, swap.swap_cost);
                extra += acts.time;
                self.swapped += acts.blocks;
                if acts.blocks > 0 {
                    let owners: Vec<usize> = acts.evicted.iter().map(|e| e.0).collect();
                    self.emit(format!("device:{d}"), "swap_out", json!({ "blocks": acts.blocks, "owners": owners }));
                }
            } else {
                let lost = self.devices[d].kv.drop_until_fits(need);
                if !lost.is_empty() && !self.cfg.model_recompute {
                    self.overflow =
                        Some(format!("device {d} ran out of KV blocks at t={} with recomputation disabled", self.now));
                    return;
                }
                for o in lost {
                    self.st[o].needs_recompute = true;
                }
            }
            let dev = &mut self.devices[d];
            if dev.kv.used() + need > dev.kv.total() {
                if colocated {
                    dev.kv.set_active(s, false);
                }
                break;
            }
            dev.waitq.pop_front();
            let back = dev.kv.swap_in(s);
            extra += back as f64 * swap.swap_cost;
            let grow = target - dev.kv.resident(s);
            dev.kv.grow(s, grow);
            dev.active += 1;
            let active = dev.active;
            if d < self.n_gen {
                self.trace.record(d, self.now, active);
            }
            let prefill = if colocated { self.prefill_tokens(s) } else { 0 };
            let c = &self.cfg.costs;
            let decode = self.samples[s].turns[t].decode_tokens as f64
                * c.decode_per_token
                * (1.0 + c.contention * f64::from(active - 1));
            let dur = prefill as f64 * c.prefill_per_token + extra + decode;
            self.emit(format!("sample:{s}"), "gen_start", json!({ "turn": t, "device": d, "active": active }));
            self.schedule(self.now + dur, Ev::GenDone(s));
        }
    }

    fn on_gen_done(&mut self, s: usize) {
        let d = self.st[s].device;
        let t = self.st[s].turn;
        let last = t + 1 == self.samples[s].turns.len();
        let dev = &mut self.devices[d];
        dev.active -= 1;
        let active = dev.active;
        dev.kv.set_active(s, false);
        dev.kv.touch(s, self.now);
        if last {
            dev.kv.release(s);
            dev.pinned -= 1;
        }
        if d < self.n_gen {
            self.trace.record(d, self.now, active);
        }
        self.gen_end = self.gen_end.max(self.now);
        self.emit(format!("sample:{s}"), "gen_end", json!({ "turn": t, "device": d }));
        match self.mode {
            Mode::Async if last => self.schedule(self.now + self.cfg.costs.reward_time, Ev::RewardDone(s)),
            Mode::Async => self.request_env(s),
            Mode::Sync => self.phase_step(),
        }
        self.try_admit(d);
    }

    fn request_env(&mut self, s: usize) {
        if self.env_busy < self.cfg.env_workers {
            self.env_busy += 1;
            let t = self.st[s].turn;
            self.emit(format!("sample:{s}"), "env_start", json!({ "turn": t }));
            self.schedule(self.now + self.samples[s].turns[t].env_latency, Ev::EnvDone(s));
        } else {
            self.env_q.push_back(s);
        }
    }

    fn on_env_done(&mut self, s: usize) {
        self.env_busy -= 1;
        self.emit(format!("sample:{s}"), "env_end", json!({ "turn": self.st[s].turn }));
        if let Some(next) = self.env_q.pop_front() {
            self.request_env(next);
        }
        self.st[s].turn += 1;
        match self.mode {
            Mode::Async => self.request_generation(s),
            Mode::Sync => self.phase_step(),
        }
    }

    fn on_reward_done(&mut self, s: usize) {
        self.completed += 1;
        let v = self.st[s].version;
        self.queue.push(QueuedSample { sample: s, policy_version: v, ready_at: self.now });
        self.emit(format!("sample:{s}"), "enqueue", json!({ "version": v }));
        match self.mode {
            Mode::Async => self.try_train(),
            Mode::Sync => self.phase_step(),
        }
    }

    // ---- trainer ----

    fn try_train(&mut self) {
        if self.trainer_busy {
            return;
        }
        let batch = self.cfg.batch_size;
        let min_take = match self.mode {
            Mode::Sync => self.members.len(),
            Mode::Async if self.started == self.samples.len() && self.completed == self.started => 1,
            Mode::Async => batch,
        };
        let take = if self.mode == Mode::Sync { self.members.len() } else { batch };
        let (taken, stale) = self.queue.take_batch(take, min_take, self.cfg.max_version_lag);
        for q in &stale {
            self.emit(format!("sample:{}", q.sample), "reject_stale", json!({ "version": q.policy_version }));
        }
        if !taken.is_empty() {
            let v = self.queue.current_version;
            for q in &taken {
                self.staleness.push(v - q.policy_version.min(v));
                *self.per_domain.get_mut(&self.domains[self.samples[q.sample].domain]).expect("known domain") += 1;
            }
            self.trained += taken.len() as u64;
            self.trainer_busy = true;
            let ids: Vec<usize> = taken.iter().map(|q| q.sample).collect();
            self.emit("trainer", "train_start", json!({ "version": v, "samples": ids }));
            let c = &self.cfg.costs;
            self.schedule(self.now + c.train_base + c.train_per_sample * taken.len() as f64, Ev::TrainDone);
        }
        if self.mode == Mode::Async && (!stale.is_empty() || self.trainer_busy) {
            self.start_samples();
        }
    }

    fn on_train_done(&mut self) {
        self.trainer_busy = false;
        self.train_steps += 1;
        self.queue.current_version += 1;
        self.makespan = self.now;
        let v = self.queue.current_version;
        self.emit("trainer", "train_end", json!({ "version": v }));
        match self.mode {
            Mode::Async => {
                self.start_samples();
                self.try_train();
            }
            Mode::Sync => self.start_batch(),
        }
    }

    /// Starts new samples while the ones in flight or queued could still be trained
    /// within the lag bound: a sample started now is consumed roughly
    /// `busy + pending / batch` versions later.
    fn start_samples(&mut self) {
        let batch = self.cfg.batch_size;
        let budget = (self.cfg.max_version_lag + 1).saturating_sub(u64::from(self.trainer_busy)) as usize * batch;
        while self.started < self.samples.len() {
            let pending = self.started - self.trained as usize - self.queue.rejected as usize;
            if pending >= budget {
                break;
            }
            self.start_sample(self.started);
        }
    }

    // ---- sync barriers ----

    fn start_batch(&mut self) {
        let lo = self.started;
        let hi = (lo + self.cfg.batch_size).min(self.samples.len());
        if lo == hi {
            return;
        }
        self.members = (lo..hi).collect();
        self.live = self.members.clone();
        self.phase = Phase::Gen;
        self.phase_pending = self.live.len();
        for s in lo..hi {
            self.start_sample(s);
        }
    }

    fn phase_step(&mut self) {
        self.phase_pending -= 1;
        if self.phase_pending > 0 {
            return;
        }
        match self.phase {
            Phase::Gen => {
                let samples = self.samples;
                let st = &self.st;
                self.live.retain(|&s| st[s].turn + 1 < samples[s].turns.len());
                if self.live.is_empty() {
                    self.phase = Phase::Reward;
                    self.phase_pending = self.members.len();
                    let at = self.now + self.cfg.costs.reward_time;
                    for s in self.members.clone() {
                        self.schedule(at, Ev::RewardDone(s));
                    }
                } else {
                    self.phase = Phase::Env;
                    self.phase_pending = self.live.len();
                    for s in self.live.clone() {
                        self.request_env(s);
                    }
                }
            }
            Phase::Env => {
                self.phase = Phase::Gen;
                self.phase_pending = self.live.len();
                for s in self.live.clone() {
                    self.request_generation(s);
                }
            }
            Phase::Reward => self.try_train(),
        }
    }

    fn finish(mut self) -> SimOutput {
        self.trace.end = self.gen_end;
        let lags = &self.staleness;
        let mean_staleness = if lags.is_empty() { 0.0 } else { lags.iter().sum::<u64>() as f64 / lags.len() as f64 };
        let metrics = SimMetrics {
            mode: self.mode,
            makespan: self.makespan,
            samples_per_sec: if self.makespan > 0.0 { self.trained as f64 / self.makespan } else { 0.0 },
            request_load_ratio: request_load_ratio(&self.trace, self.cfg.device_capacity),
            mean_staleness,
            max_staleness: lags.iter().copied().max().unwrap_or(0),
            per_domain: self.per_domain,
            kv_recomputations: self.recomputations,
            kv_swapped_blocks: self.swapped,
            transfer_overlap_ratio: if self.transfer_time > 0.0 { self.overlapped / self.transfer_time } else { 0.0 },
            generated: self.completed as u64,
            trained: self.trained,
            rejected_stale: self.queue.rejected,
            in_flight_end: self.queue.pending.len() as u64 + (self.started - self.completed) as u64,
            train_steps: self.train_steps,
            final_version: self.queue.current_version,
        };
        SimOutput { metrics, events: self.log.unwrap_or_default(), staleness: self.staleness, occupancy: self.trace }
    }
}
