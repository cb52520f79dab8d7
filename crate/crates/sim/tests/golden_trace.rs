//! Three hand-traced samples on one device with binary-exact costs.
//!
//! Prefill 1/128 s per token, decode 1/64 s per token, no contention, reward 0.5 s,
//! training 1 + 0.25 s per sample, batch 3.
//!
//! | sample | prompt | turn 0 (decode, obs, env) | turn 1 decode |
//! |--------|--------|---------------------------|---------------|
//! | 0      | 128    | 64, 128, 2.0              | 128           |
//! | 1      | 256    | 64, -, -                  | -             |
//! | 2      | 128    | 64, 64, 0.5               | 64            |
//!
//! Sync: turn 0 ends at 2, 3, 2, so the barrier lifts at 3. Env ends at 5 and 3.5,
//! barrier at 5. Turn 1 runs 5..8 (1 + 2) and 5..6.5 (0.5 + 1). Reward at 8.5,
//! training 8.5..10.25.
//!
//! Async: sample 0 runs env 2..4 and turn 1 4..7, reward 7.5. Sample 1 reward 3.5.
//! Sample 2 runs env 2..2.5 and turn 1 2.5..4, reward 4.5. Training 7.5..9.25.

use std::fs;
use std::path::PathBuf;

use toolforge_sim::{simulate_samples, ClusterConfig, CostModel, Mode, SampleSpec, SimOutput, TurnSpec};

fn cluster() -> ClusterConfig {
    ClusterConfig {
        gen_devices: 1,
        device_capacity: 4,
        initial_capacity: 4,
        first_balance_time: 0.0,
        batch_size: 3,
        costs: CostModel {
            prefill_per_token: 1.0 / 128.0,
            decode_per_token: 1.0 / 64.0,
            contention: 0.0,
            reward_time: 0.5,
            train_base: 1.0,
            train_per_sample: 0.25,
        },
        ..ClusterConfig::default()
    }
}

fn turn(decode_tokens: u64, obs_tokens: u64, env_latency: f64) -> TurnSpec {
    TurnSpec { decode_tokens, obs_tokens, env_latency }
}

fn samples() -> Vec<SampleSpec> {
    vec![
        SampleSpec { domain: 0, prompt_tokens: 128, turns: vec![turn(64, 128, 2.0), turn(128, 1, 1.0)] },
        SampleSpec { domain: 0, prompt_tokens: 256, turns: vec![turn(64, 1, 1.0)] },
        SampleSpec { domain: 0, prompt_tokens: 128, turns: vec![turn(64, 64, 0.5), turn(64, 1, 1.0)] },
    ]
}

fn run(mode: Mode) -> SimOutput {
    simulate_samples(&cluster(), &samples(), &["tools".to_string()], mode, true).unwrap()
}

fn timeline(out: &SimOutput) -> Vec<(f64, String, String)> {
    out.events.iter().map(|e| (e.time, e.entity.clone(), e.event.clone())).collect()
}

fn expect(rows: &[(f64, &str, &str)]) -> Vec<(f64, String, String)> {
    rows.iter().map(|&(t, a, b)| (t, a.to_string(), b.to_string())).collect()
}

fn check_golden(name: &str, out: &SimOutput) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    let got = out.events_jsonl();
    if std::env::var_os("TOOLFORGE_BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, &got).unwrap();
    }
    let want = fs::read_to_string(&path).expect("golden file present");
    assert_eq!(got, want, "event log differs from {}", path.display());
}

#[test]
fn sync_trace_matches_hand_schedule() {
    let out = run(Mode::Sync);
    let want = expect(&[
        (0.0, "sample:0", "start"),
        (0.0, "sample:0", "gen_start"),
        (0.0, "sample:1", "start"),
        (0.0, "sample:1", "gen_start"),
        (0.0, "sample:2", "start"),
        (0.0, "sample:2", "gen_start"),
        (2.0, "sample:0", "gen_end"),
        (2.0, "sample:2", "gen_end"),
        (3.0, "sample:1", "gen_end"),
        (3.0, "sample:0", "env_start"),
        (3.0, "sample:2", "env_start"),
        (3.5, "sample:2", "env_end"),
        (5.0, "sample:0", "env_end"),
        (5.0, "sample:0", "gen_start"),
        (5.0, "sample:2", "gen_start"),
        (6.5, "sample:2", "gen_end"),
        (8.0, "sample:0", "gen_end"),
        (8.5, "sample:0", "enqueue"),
        (8.5, "sample:1", "enqueue"),
        (8.5, "sample:2", "enqueue"),
        (8.5, "trainer", "train_start"),
        (10.25, "trainer", "train_end"),
    ]);
    assert_eq!(timeline(&out), want);
    assert_eq!(out.metrics.makespan, 10.25);
    assert_eq!(out.metrics.trained, 3);
    check_golden("sync_3_samples.jsonl", &out);
}

#[test]
fn async_trace_matches_hand_schedule() {
    let out = run(Mode::Async);
    let want = expect(&[
        (0.0, "sample:0", "start"),
        (0.0, "sample:0", "gen_start"),
        (0.0, "sample:1", "start"),
        (0.0, "sample:1", "gen_start"),
        (0.0, "sample:2", "start"),
        (0.0, "sample:2", "gen_start"),
        (2.0, "sample:0", "gen_end"),
        (2.0, "sample:0", "env_start"),
        (2.0, "sample:2", "gen_end"),
        (2.0, "sample:2", "env_start"),
        (2.5, "sample:2", "env_end"),
        (2.5, "sample:2", "gen_start"),
        (3.0, "sample:1", "gen_end"),
        (3.5, "sample:1", "enqueue"),
        (4.0, "sample:0", "env_end"),
        (4.0, "sample:0", "gen_start"),
        (4.0, "sample:2", "gen_end"),
        (4.5, "sample:2", "enqueue"),
        (7.0, "sample:0", "gen_end"),
        (7.5, "sample:0", "enqueue"),
        (7.5, "trainer", "train_start"),
        (9.25, "trainer", "train_end"),
    ]);
    assert_eq!(timeline(&out), want);
    assert_eq!(out.metrics.makespan, 9.25);
    check_golden("async_3_samples.jsonl", &out);
}
