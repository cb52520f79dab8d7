use proptest::prelude::*;
use toolforge_sim::{
    run_simulation, run_simulation_logged, ClusterConfig, CpuSwap, DecodeStart, Dist, DomainMix, Mode, PdMode,
    SimError, SimMetrics, WorkloadModel,
};

fn both(c: &ClusterConfig, w: &WorkloadModel, seed: u64) -> (SimMetrics, SimMetrics) {
    (run_simulation(c, w, Mode::Sync, seed).unwrap(), run_simulation(c, w, Mode::Async, seed).unwrap())
}

fn conserved(m: &SimMetrics) -> bool {
    m.generated == m.trained + m.rejected_stale + m.in_flight_end
}

#[test]
fn degenerate_workload_has_no_barrier_penalty() {
    let c = ClusterConfig::default();
    let w = WorkloadModel::constant(c.batch_size);
    let (s, a) = both(&c, &w, 0);
    assert!((s.makespan - a.makespan).abs() < 1e-9, "sync {} async {}", s.makespan, a.makespan);
}

#[test]
fn constant_workload_throughput_ratio_near_one() {
    let (s, a) = both(&ClusterConfig::default(), &WorkloadModel::constant(512), 0);
    let r = a.samples_per_sec / s.samples_per_sec;
    assert!((0.95..=1.05).contains(&r), "{r}");
}

#[test]
fn long_tail_favours_async() {
    let c = ClusterConfig::default();
    let w = WorkloadModel::default();
    for seed in 0..10 {
        let (s, a) = both(&c, &w, seed);
        let r = a.samples_per_sec / s.samples_per_sec;
        assert!(r >= 1.5, "seed {seed}: ratio {r}");
        assert!(a.makespan <= s.makespan, "seed {seed}");
    }
}

#[test]
fn staleness_bound_on_ten_thousand_samples() {
    let w = WorkloadModel { num_samples: 10_000, ..WorkloadModel::default() };
    for lag in [0, 1, 2] {
        let c = ClusterConfig { max_version_lag: lag, ..ClusterConfig::default() };
        let out = run_simulation_logged(&c, &w, Mode::Async, 11).unwrap();
        assert_eq!(out.staleness.len() as u64, out.metrics.trained);
        assert!(out.staleness.iter().all(|&s| s <= lag), "lag {lag}");
        assert!(out.metrics.max_staleness <= lag);
        assert!(conserved(&out.metrics));
    }
}

fn long_context() -> (ClusterConfig, WorkloadModel) {
    let c = ClusterConfig { gen_devices: 2, kv_blocks_per_device: 96, ..ClusterConfig::default() };
    let w = WorkloadModel {
        num_samples: 64,
        prompt_tokens: Dist::constant(6000.0),
        turns: Dist::constant(4.0),
        decode_tokens: Dist::LogNormal { median: 400.0, sigma: 0.5 },
        obs_tokens: Dist::constant(500.0),
        ..WorkloadModel::default()
    };
    (c, w)
}

#[test]
fn swapping_eliminates_recomputation() {
    let (c, w) = long_context();
    for mode in [Mode::Sync, Mode::Async] {
        let on = run_simulation(&c, &w, mode, 2).unwrap();
        assert_eq!(on.kv_recomputations, 0);
        assert!(on.kv_swapped_blocks > 0, "workload should overflow the device cache");

        let off = ClusterConfig { cpu_swap: CpuSwap { enabled: false, ..CpuSwap::default() }, ..c.clone() };
        let m = run_simulation(&off, &w, mode, 2).unwrap();
        assert!(m.kv_recomputations > 0);
        assert_eq!(m.kv_swapped_blocks, 0);
        assert_eq!(m.trained, on.trained);
    }
}

#[test]
fn overflow_without_swap_or_recompute_is_rejected() {
    let (c, w) = long_context();
    let c = ClusterConfig { cpu_swap: CpuSwap { enabled: false, ..CpuSwap::default() }, model_recompute: false, ..c };
    assert!(matches!(run_simulation(&c, &w, Mode::Async, 0), Err(SimError::CapacityInfeasible(_))));
    let huge = WorkloadModel { prompt_tokens: Dist::constant(1e6), ..w };
    assert!(matches!(
        run_simulation(&ClusterConfig::default(), &huge, Mode::Sync, 0),
        Err(SimError::CapacityInfeasible(_))
    ));
}

#[test]
fn runs_are_deterministic() {
    let c = ClusterConfig::default();
    let w = WorkloadModel { num_samples: 200, ..WorkloadModel::default() };
    for mode in [Mode::Sync, Mode::Async] {
        let a = run_simulation_logged(&c, &w, mode, 5).unwrap();
        let b = run_simulation_logged(&c, &w, mode, 5).unwrap();
        assert_eq!(a.events_jsonl(), b.events_jsonl());
        assert_eq!(a.metrics, b.metrics);
    }
}

#[test]
fn event_log_is_causal() {
    let c = ClusterConfig::default();
    let w = WorkloadModel { num_samples: 300, ..WorkloadModel::default() };
    let out = run_simulation_logged(&c, &w, Mode::Async, 9).unwrap();
    assert!(out.events.windows(2).all(|p| p[0].time <= p[1].time));
    // every sample is enqueued after its last generation turn ends
    for s in 0..300 {
        let id = format!("sample:{s}");
        let last_gen =
            out.events.iter().filter(|e| e.entity == id && e.event == "gen_end").map(|e| e.time).fold(0.0, f64::max);
        let enq = out.events.iter().find(|e| e.entity == id && e.event == "enqueue").unwrap();
        assert!(enq.time >= last_gen);
    }
}

#[test]
fn disaggregated_prefill_overlaps_transfers() {
    let c = ClusterConfig {
        pd_mode: PdMode::Disaggregated {
            prefill_devices: 2,
            decode_devices: 6,
            chunk_size: 512,
            link_rate: 50_000.0,
            decode_start: DecodeStart::Overlapped,
        },
        ..ClusterConfig::default()
    };
    let w = WorkloadModel { num_samples: 256, ..WorkloadModel::default() };
    for mode in [Mode::Sync, Mode::Async] {
        let m = run_simulation(&c, &w, mode, 1).unwrap();
        assert!(m.transfer_overlap_ratio > 0.0 && m.transfer_overlap_ratio <= 1.0, "{}", m.transfer_overlap_ratio);
        assert!(conserved(&m));
        assert_eq!(m.trained + m.rejected_stale, 256);
    }
}

#[test]
fn per_domain_counts_follow_mix() {
    let w = WorkloadModel {
        num_samples: 400,
        domains: vec![
            DomainMix { name: "retail".into(), ratio: 3.0, latency_scale: 1.0 },
            DomainMix { name: "airline".into(), ratio: 1.0, latency_scale: 2.0 },
        ],
        ..WorkloadModel::default()
    };
    let m = run_simulation(&ClusterConfig::default(), &w, Mode::Sync, 0).unwrap();
    assert_eq!(m.per_domain["retail"], 300);
    assert_eq!(m.per_domain["airline"], 100);
}

#[test]
fn elastic_devices_take_work_while_trainer_idles() {
    let c = ClusterConfig { elastic_devices: 2, ..ClusterConfig::default() };
    let w = WorkloadModel { num_samples: 256, ..WorkloadModel::default() };
    let out = run_simulation_logged(&c, &w, Mode::Async, 4).unwrap();
    let on_elastic =
        out.events.iter().filter(|e| e.event == "start" && e.payload["device"].as_u64().unwrap() >= 8).count();
    assert!(on_elastic > 0);
    assert!(conserved(&out.metrics));
}

fn small_workload() -> impl Strategy<Value = (ClusterConfig, WorkloadModel, u64)> {
    (1u32..4, 1usize..9, 8usize..60, 0.0f64..1.5, 0u64..3, any::<u64>()).prop_map(
        |(dev, batch, n, sigma, lag, seed)| {
            let c =
                ClusterConfig { gen_devices: dev, batch_size: batch, max_version_lag: lag, ..ClusterConfig::default() };
            let w = WorkloadModel {
                num_samples: n,
                decode_tokens: Dist::LogNormal { median: 200.0, sigma },
                turns: Dist::Uniform { lo: 1.0, hi: 4.0 },
                ..WorkloadModel::default()
            };
            (c, w, seed)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulation_invariants((c, w, seed) in small_workload()) {
        for mode in [Mode::Sync, Mode::Async] {
            let out = run_simulation_logged(&c, &w, mode, seed).unwrap();
            let m = &out.metrics;
            prop_assert!(conserved(m));
            prop_assert!(out.staleness.iter().all(|&s| s <= c.max_version_lag));
            prop_assert!((0.0..=1.0).contains(&m.request_load_ratio));
            prop_assert_eq!(m.kv_recomputations, 0);
            prop_assert_eq!(m.in_flight_end, 0);
        }
    }

    #[test]
    fn async_never_slower((c, w, seed) in small_workload()) {
        let (s, a) = both(&c, &w, seed);
        prop_assert!(a.makespan <= s.makespan + 1e-9, "async {} sync {}", a.makespan, s.makespan);
    }
}
