//! Cluster, cost and workload configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispatch::{domain_oversample_dispatch, DispatchState};
use crate::dist::Dist;
use crate::pd::DecodeStart;
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch barriers: every turn of a batch waits for its slowest member, and
    /// generation pauses while the trainer runs.
    Sync,
    /// Per-sample streaming with multi-version generation.
    Async,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpuSwap {
    pub enabled: bool,
    /// Usage fraction in (0, 1] at which idle blocks move to host memory.
    pub watermark: f64,
    /// Seconds per block moved in either direction.
    pub swap_cost: f64,
}

impl Default for CpuSwap {
    fn default() -> Self {
        Self { enabled: true, watermark: 0.9, swap_cost: 0.0005 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PdMode {
    #[default]
    Colocated,
    /// Prefill on its own device group; KV ships to decode devices in chunks.
    Disaggregated {
        prefill_devices: u32,
        decode_devices: u32,
        chunk_size: u64,
        link_rate: f64,
        decode_start: DecodeStart,
    },
}

/// Calibrated time constants; none of these come from measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Seconds per prefilled token.
    pub prefill_per_token: f64,
    /// Seconds per decoded token on an otherwise idle device.
    pub decode_per_token: f64,
    /// Fractional decode slowdown per additional co-resident request.
    pub contention: f64,
    pub reward_time: f64,
    pub train_base: f64,
    pub train_per_sample: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            prefill_per_token: 0.0002,
            decode_per_token: 0.02,
            contention: 0.05,
            reward_time: 0.1,
            train_base: 0.1,
            train_per_sample: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Generation devices in colocated mode.
    pub gen_devices: u32,
    pub env_workers: u32,
    /// Steady-state requests per device.
    pub device_capacity: u32,
    /// Requests per device before the first load-balancing event.
    pub initial_capacity: u32,
    pub first_balance_time: f64,
    pub kv_blocks_per_device: u64,
    pub block_tokens: u64,
    pub cpu_swap: CpuSwap,
    /// Without swapping, lost caches are rebuilt by re-prefilling the context. When
    /// this is off such workloads are rejected instead.
    pub model_recompute: bool,
    pub pd_mode: PdMode,
    pub max_version_lag: u64,
    pub batch_size: usize,
    /// Trainer devices lent to generation while the trainer is idle (async only).
    pub elastic_devices: u32,
    pub costs: CostModel,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            gen_devices: 8,
            env_workers: 256,
            device_capacity: 4,
            initial_capacity: 8,
            first_balance_time: 30.0,
            kv_blocks_per_device: 1024,
            block_tokens: 256,
            cpu_swap: CpuSwap::default(),
            model_recompute: true,
            pd_mode: PdMode::Colocated,
            max_version_lag: 1,
            batch_size: 64,
            elastic_devices: 0,
            costs: CostModel::default(),
        }
    }
}

impl ClusterConfig {
    /// Devices that run decode (and prefill, when colocated).
    pub fn generation_devices(&self) -> u32 {
        match self.pd_mode {
            PdMode::Colocated => self.gen_devices,
            PdMode::Disaggregated { decode_devices, .. } => decode_devices,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let counts = [
            ("gen_devices", u64::from(self.gen_devices)),
            ("env_workers", u64::from(self.env_workers)),
            ("device_capacity", u64::from(self.device_capacity)),
            ("initial_capacity", u64::from(self.initial_capacity)),
            ("kv_blocks_per_device", self.kv_blocks_per_device),
            ("block_tokens", self.block_tokens),
            ("batch_size", self.batch_size as u64),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let w = self.cpu_swap.watermark;
        if !(w > 0.0 && w <= 1.0) {
            return bad(format!("cpu_swap.watermark must lie in (0, 1], got {w}"));
        }
        let c = &self.costs;
        let times = [
            ("swap_cost", self.cpu_swap.swap_cost),
            ("first_balance_time", self.first_balance_time),
            ("prefill_per_token", c.prefill_per_token),
            ("decode_per_token", c.decode_per_token),
            ("contention", c.contention),
            ("reward_time", c.reward_time),
            ("train_base", c.train_base),
            ("train_per_sample", c.train_per_sample),
        ];
        for (name, v) in times {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if let PdMode::Disaggregated { prefill_devices, decode_devices, chunk_size, link_rate, .. } = self.pd_mode {
            if prefill_devices == 0
                || decode_devices == 0
                || chunk_size == 0
                || !(link_rate.is_finite() && link_rate > 0.0)
            {
                return bad("disaggregated mode needs positive device counts, chunk size and link rate".into());
            }
        }
        Ok(())
    }

    pub fn blocks(&self, tokens: u64) -> u64 {
        tokens.div_ceil(self.block_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMix {
    pub name: String,
    /// Oversampling ratio used by the dispatcher.
    pub ratio: f64,
    /// Multiplier on environment latency for this domain.
    pub latency_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadModel {
    pub num_samples: usize,
    pub prompt_tokens: Dist,
    pub turns: Dist,
    pub decode_tokens: Dist,
    /// Tool-output tokens appended to the context after each non-final turn.
    pub obs_tokens: Dist,
    pub env_latency: Dist,
    pub domains: Vec<DomainMix>,
}

impl Default for WorkloadModel {
    fn default() -> Self {
        Self {
            num_samples: 512,
            prompt_tokens: Dist::LogNormal { median: 2000.0, sigma: 0.3 },
            turns: Dist::Uniform { lo: 1.0, hi: 6.0 },
            decode_tokens: Dist::LogNormal { median: 300.0, sigma: 1.2 },
            obs_tokens: Dist::LogNormal { median: 300.0, sigma: 0.5 },
            env_latency: Dist::Pareto { scale: 1.0, shape: 1.5 },
            domains: vec![DomainMix { name: "tools".into(), ratio: 1.0, latency_scale: 1.0 }],
        }
    }
}

impl WorkloadModel {
    /// Every duration and token count fixed; one turn per sample.
    pub fn constant(num_samples: usize) -> Self {
        Self {
            num_samples,
            prompt_tokens: Dist::constant(2000.0),
            turns: Dist::constant(1.0),
            decode_tokens: Dist::constant(300.0),
            obs_tokens: Dist::constant(300.0),
            env_latency: Dist::constant(1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_samples == 0 {
            return Err(SimError::InvalidConfig("num_samples must be positive".into()));
        }
        if self.domains.is_empty() {
            return Err(SimError::InvalidConfig("at least one domain is required".into()));
        }
        for d in &self.domains {
            if !(d.latency_scale.is_finite() && d.latency_scale > 0.0) {
                return Err(SimError::InvalidConfig(format!("domain {} latency_scale must be positive", d.name)));
            }
        }
        self.prompt_tokens.validate("prompt_tokens")?;
        self.turns.validate("turns")?;
        self.decode_tokens.validate("decode_tokens")?;
        self.obs_tokens.validate("obs_tokens")?;
        self.env_latency.validate("env_latency")?;
        DispatchState::new(&self.ratios()).map(|_| ())
    }

    fn ratios(&self) -> Vec<f64> {
        self.domains.iter().map(|d| d.ratio).collect()
    }

    /// Draws the concrete samples; sync and async runs of one seed see the same list.
    pub fn generate(&self, seed: u64) -> Result<Vec<SampleSpec>, SimError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dispatch = DispatchState::new(&self.ratios())?;
        let samples = (0..self.num_samples)
            .map(|_| {
                let domain = domain_oversample_dispatch(&mut dispatch);
                let scale = self.domains[domain].latency_scale;
                let prompt_tokens = self.prompt_tokens.sample_count(&mut rng);
                let n = self.turns.sample_count(&mut rng) as usize;
                let turns = (0..n)
                    .map(|_| TurnSpec {
                        decode_tokens: self.decode_tokens.sample_count(&mut rng),
                        obs_tokens: self.obs_tokens.sample_count(&mut rng),
                        env_latency: self.env_latency.sample(&mut rng) * scale,
                    })
                    .collect();
                SampleSpec { domain, prompt_tokens, turns }
            })
            .collect();
        Ok(samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSpec {
    pub decode_tokens: u64,
    /// Tokens the environment returns; unused on the final turn.
    pub obs_tokens: u64,
    pub env_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub domain: usize,
    pub prompt_tokens: u64,
    pub turns: Vec<TurnSpec>,
}

impl SampleSpec {
    /// Fresh input tokens for turn `t`: the prompt, then the previous observation.
    pub fn input_tokens(&self, t: usize) -> u64 {
        if t == 0 {
            self.prompt_tokens
        } else {
            self.turns[t - 1].obs_tokens
        }
    }

    /// Context length after generating turn `t`.
    pub fn context_after(&self, t: usize) -> u64 {
        (0..=t).map(|k| self.input_tokens(k) + self.turns[k].decode_tokens).sum()
    }

    pub fn max_context(&self) -> u64 {
        self.context_after(self.turns.len() - 1)
    }
}
