//! Independent reference implementations checked against the library.

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use toolforge_strategy::{
    allocate_budget, curriculum_order, fit_power_law, group_advantages, kcg_select, sliding_window_ppl, CurriculumTask,
};

fn exact_utility(values: &[i64], alloc: &[u32]) -> Ratio<i64> {
    values.iter().zip(alloc).map(|(&v, &n)| (1..=i64::from(n)).map(|k| Ratio::new(v, k)).sum::<Ratio<i64>>()).sum()
}

fn best_allocation(values: &[i64], total: u32, lo: u32, hi: u32) -> Ratio<i64> {
    fn go(values: &[i64], left: u32, lo: u32, hi: u32, acc: &mut Vec<u32>, best: &mut Option<Ratio<i64>>) {
        if acc.len() == values.len() {
            if left == 0 {
                let u = exact_utility(values, acc);
                if best.is_none_or(|b| u > b) {
                    *best = Some(u);
                }
            }
            return;
        }
        for n in lo..=hi.min(left) {
            acc.push(n);
            go(values, left - n, lo, hi, acc, best);
            acc.pop();
        }
    }
    let mut best = None;
    go(values, total, lo, hi, &mut Vec::new(), &mut best);
    best.expect("feasible instance")
}

#[test]
fn greedy_budget_matches_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 1500 {
        let n = rng.random_range(1..=5usize);
        let lo = rng.random_range(0..=2u32);
        let hi = rng.random_range(lo..=6u32);
        let total = rng.random_range(0..=10u32);
        if total < lo * n as u32 || total > hi * n as u32 {
            continue;
        }
        let values: Vec<i64> = (0..n).map(|_| rng.random_range(0..=12)).collect();
        let fv: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let alloc = allocate_budget(&fv, total, lo, hi).unwrap();
        assert_eq!(alloc.iter().sum::<u32>(), total);
        assert!(alloc.iter().all(|&a| (lo..=hi).contains(&a)));
        assert_eq!(
            exact_utility(&values, &alloc),
            best_allocation(&values, total, lo, hi),
            "{values:?} {total} [{lo},{hi}]"
        );
        checked += 1;
    }
}

#[test]
fn advantages_match_two_pass_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let r: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut mean = 0.0;
        for x in &r {
            mean += x;
        }
        mean /= 16.0;
        let mut var = 0.0;
        for x in &r {
            var += (x - mean) * (x - mean);
        }
        let std = (var / 16.0).sqrt();
        for (a, x) in group_advantages(&r).unwrap().iter().zip(&r) {
            assert!((a - (x - mean) / std).abs() < 1e-12);
        }
    }
}

fn brute_ppl(x: &[f64], window: usize) -> f64 {
    let w = window.min(x.len());
    let mut best = f64::NEG_INFINITY;
    for s in 0..=x.len() - w {
        let mut sum = 0.0;
        for v in &x[s..s + w] {
            sum += v;
        }
        best = best.max((sum / w as f64).exp());
    }
    best
}

#[test]
fn sliding_ppl_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let n = if i % 10 == 0 { 2000 } else { rng.random_range(1..700) };
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..8.0)).collect();
        assert_eq!(sliding_window_ppl(&x, 512).unwrap(), brute_ppl(&x, 512));
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Classic farthest-point k-center greedy from index 0.
fn plain_kcg(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut picked = vec![0];
    while picked.len() < k {
        let mut best = None;
        let mut best_d = -1.0;
        for i in 0..points.len() {
            if picked.contains(&i) {
                continue;
            }
            let d = picked.iter().map(|&j| dist(&points[i], &points[j])).fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        picked.push(best.unwrap());
    }
    picked
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn uniform_scores_reduce_to_k_center_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let pts = random_points(&mut rng, 20, 3);
        let k = rng.random_range(1..=20);
        assert_eq!(kcg_select(&pts, &[2.5; 20], k).unwrap(), plain_kcg(&pts, k));
    }
}

#[test]
fn weighted_selection_matches_stepwise_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let pts = random_points(&mut rng, 15, 2);
        let scores: Vec<f64> = (0..15).map(|_| rng.random_range(0.5..3.0)).collect();
        let got = kcg_select(&pts, &scores, 4).unwrap();
        let mut want: Vec<usize> = Vec::new();
        for step in 0..4 {
            let key = |i: usize| {
                if step == 0 {
                    scores[i]
                } else {
                    scores[i] * want.iter().map(|&j| dist(&pts[i], &pts[j])).fold(f64::INFINITY, f64::min)
                }
            };
            let cand = (0..15).filter(|i| !want.contains(i));
            let best = cand.fold(None, |b: Option<usize>, i| match b {
                Some(b) if key(b) >= key(i) => Some(b),
                _ => Some(i),
            });
            want.push(best.unwrap());
        }
        assert_eq!(got, want);
    }
}

#[test]
fn noisy_power_law_recovers_exponent() {
    let noise = Normal::new(0.0, 0.05).unwrap();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|_| {
                let c = 10f64.powf(rng.random_range(18.0..22.0));
                (c, 3.0 * c.powf(-0.07) * f64::exp(noise.sample(&mut rng)))
            })
            .collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.exponent + 0.07).abs() <= 0.02, "seed {seed}: {}", f.exponent);
    }
}

#[test]
fn curriculum_respects_tiers_and_difficulty() {
    let tiers = ["basic", "planning", "autonomy", "retrieval"];
    // basic < planning < autonomy; retrieval unconstrained
    let edges: Vec<(String, String)> =
        vec![("basic".into(), "planning".into()), ("planning".into(), "autonomy".into())];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let tasks: Vec<CurriculumTask> = (0..50)
            .map(|_| CurriculumTask {
                difficulty: f64::from(rng.random_range(0..10u8)) / 10.0,
                tier: tiers[rng.random_range(0..4)].into(),
            })
            .collect();
        let order = curriculum_order(&tasks, &edges).unwrap();
        let mut seen = order.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
        let pos = |i: usize| order.iter().position(|&o| o == i).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                let (a, b) = (&tasks[i], &tasks[j]);
                if edges.iter().any(|(p, q)| *p == a.tier && *q == b.tier) {
                    assert!(pos(i) < pos(j), "prerequisite tier out of order");
                }
                if a.tier == b.tier && (a.difficulty < b.difficulty || (a.difficulty == b.difficulty && i < j)) {
                    assert!(pos(i) < pos(j), "within-tier order broken");
                }
            }
        }
    }
}
