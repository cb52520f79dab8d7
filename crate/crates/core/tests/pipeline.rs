//! End-to-end: domain, environment, task, noise and episode working together.

use toolforge_core::context::ContextPolicy;
use toolforge_core::episode::evaluate_trajectory;
use toolforge_core::noise::{inject_instruction_noise, verify_solvability, NoiseProfile};
use toolforge_core::rng::seeded;
use toolforge_core::*;

fn world(seed: u64) -> (ToolGraph, Environment, Task) {
    let (_, g) =
        generate_domain(seed, &DomainGenConfig { style: seed as u32 % 24, ..DomainGenConfig::default() }).unwrap();
    let env = assemble_environment(&g, &EnvConfig::default(), &mut seeded(seed)).unwrap();
    let task = generate_task(&env, &g, &mut seeded(seed + 1)).unwrap();
    (g, env, task)
}

#[test]
fn generated_worlds_hold_their_invariants() {
    for seed in 0..8 {
        let (g, env, task) = world(seed);
        env.check(&g, 20).unwrap();
        assert!(validate_rubric(&task, &env, &g, 2), "seed {seed}");
    }
}

#[test]
fn environment_round_trips_through_json() {
    let (_, env, task) = world(3);
    let text = serde_json::to_string(&env).unwrap();
    assert_eq!(serde_json::from_str::<Environment>(&text).unwrap(), env);
    let text = serde_json::to_string(&task).unwrap();
    assert_eq!(serde_json::from_str::<Task>(&text).unwrap(), task);
}

#[test]
fn perfect_solver_scores_and_replay_agrees() {
    let (g, env, mut task) = world(5);
    task.user_profile.cooperativeness = 1.0;
    let solver = ScriptedSolver { skill: 1.0, clarification_rate: 1.0, ..ScriptedSolver::default() };
    let (traj, report) = run_episode(
        &env,
        &g,
        &task,
        &solver,
        &NoiseProfile::clean(),
        &ContextPolicy::off(),
        &EpisodeLimits::default(),
        &mut seeded(9),
    );
    assert_eq!(report.reward, 1);
    assert_eq!(evaluate_trajectory(&traj, &env, &g, &task.rubric).reward, 1);
    for line in traj.to_jsonl().lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn noisy_tasks_keep_rubric_and_stay_solvable() {
    let (g, env, task) = world(11);
    for level in 0..=4 {
        let noisy = inject_instruction_noise(&task, level, &mut seeded(level as u64));
        assert_eq!(serde_json::to_string(&noisy.rubric).unwrap(), serde_json::to_string(&task.rubric).unwrap());
        assert!(verify_solvability(&env, &g, &task, &NoiseProfile::uniform(level), 3));
    }
}
