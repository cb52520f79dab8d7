//! Deterministic discrete-event simulation of an asynchronous multi-domain rollout
//! system: streaming samples, version-lag admission, two-phase request caps,
//! prefill/decode disaggregation with chunked KV transfer, and KV swapping.

pub mod config;
pub mod dispatch;
pub mod dist;
pub mod engine;
pub mod kv;
pub mod load;
pub mod pd;
pub mod queue;

use thiserror::Error;

pub use config::{ClusterConfig, CostModel, CpuSwap, DomainMix, Mode, PdMode, SampleSpec, TurnSpec, WorkloadModel};
pub use dispatch::{domain_oversample_dispatch, DispatchState};
pub use dist::Dist;
pub use engine::{run_simulation, run_simulation_logged, simulate_samples, SimEvent, SimMetrics, SimOutput};
pub use kv::{kv_swap_step, KvStore, SwapActions};
pub use load::{request_load_ratio, two_phase_caps, OccupancyTrace};
pub use pd::{pd_transfer_schedule, DecodeStart, PdTimeline};
pub use queue::{staleness_admit, QueuedSample, SampleQueueState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("capacity infeasible: {0}")]
    CapacityInfeasible(String),
}
