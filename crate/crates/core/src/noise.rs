//! Leveled instruction and tool noise, solvability checks and the noise curriculum.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextPolicy;
use crate::domain::ToolGraph;
use crate::env::Environment;
use crate::episode::{run_episode_with, CostModel, EpisodeLimits, ScriptedSolver};
use crate::exec::{ToolCall, ToolResult, ToolStatus};
use crate::rng::seeded;
use crate::task::{gold_plan, Distractor, Task};

/// Highest noise level.
pub const MAX_LEVEL: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("invalid noise profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    ToolFailure,
    PartialResult,
    InconsistentResponse,
    LatencySpike,
    ConstraintObfuscation,
    DistractorPreference,
    Reordering,
}

impl NoiseKind {
    pub fn is_tool(self) -> bool {
        matches!(self, Self::ToolFailure | Self::PartialResult | Self::InconsistentResponse | Self::LatencySpike)
    }

    /// Kinds after which a careful agent has to repeat the call.
    pub fn needs_retry(self) -> bool {
        matches!(self, Self::ToolFailure | Self::PartialResult | Self::InconsistentResponse)
    }
}

pub fn tool_kinds(level: u32) -> BTreeSet<NoiseKind> {
    let mut k = BTreeSet::new();
    if level >= 1 {
        k.insert(NoiseKind::ToolFailure);
    }
    if level >= 2 {
        k.insert(NoiseKind::PartialResult);
    }
    if level >= 3 {
        k.insert(NoiseKind::InconsistentResponse);
        k.insert(NoiseKind::LatencySpike);
    }
    k
}

pub fn instruction_kinds(level: u32) -> BTreeSet<NoiseKind> {
    let mut k = BTreeSet::new();
    if level >= 1 {
        k.insert(NoiseKind::ConstraintObfuscation);
    }
    if level >= 2 {
        k.insert(NoiseKind::DistractorPreference);
    }
    if level >= 3 {
        k.insert(NoiseKind::Reordering);
    }
    k
}

/// Per-call probabilities at the highest level; level l uses l / MAX_LEVEL of each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolNoiseRates {
    pub failure: f64,
    pub partial: f64,
    pub inconsistent: f64,
    pub latency: f64,
    /// Seconds added by a latency spike.
    pub spike_seconds: f64,
}

impl Default for ToolNoiseRates {
    fn default() -> Self {
        Self { failure: 0.3, partial: 0.15, inconsistent: 0.1, latency: 0.2, spike_seconds: 5.0 }
    }
}

impl ToolNoiseRates {
    fn validate(&self) -> Result<(), NoiseError> {
        let all = [self.failure, self.partial, self.inconsistent, self.latency];
        if let Some(r) = all.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(NoiseError::InvalidRate(*r));
        }
        if all.iter().sum::<f64>() > 1.0 {
            return Err(NoiseError::InvalidProfile("tool noise rates sum above 1".into()));
        }
        if !(self.spike_seconds >= 0.0) {
            return Err(NoiseError::InvalidProfile("spike_seconds must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub instruction_level: u32,
    pub tool_level: u32,
    pub enabled_kinds: BTreeSet<NoiseKind>,
    #[serde(default)]
    pub rates: ToolNoiseRates,
    /// Tools that always fail. Used to model unsolvable profiles.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub permanent_failures: BTreeSet<String>,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self::clean()
    }
}

impl NoiseProfile {
    pub fn clean() -> Self {
        Self::at_levels(0, 0)
    }

    /// Levels above `MAX_LEVEL` are clamped.
    pub fn at_levels(instruction: u32, tool: u32) -> Self {
        let (i, t) = (instruction.min(MAX_LEVEL), tool.min(MAX_LEVEL));
        let mut kinds = tool_kinds(t);
        kinds.extend(instruction_kinds(i));
        Self {
            instruction_level: i,
            tool_level: t,
            enabled_kinds: kinds,
            rates: ToolNoiseRates::default(),
            permanent_failures: BTreeSet::new(),
        }
    }

    pub fn uniform(level: u32) -> Self {
        Self::at_levels(level, level)
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        self.rates.validate()?;
        if self.instruction_level > MAX_LEVEL || self.tool_level > MAX_LEVEL {
            return Err(NoiseError::InvalidProfile(format!("levels above {MAX_LEVEL}")));
        }
        let mut allowed = tool_kinds(self.tool_level);
        allowed.extend(instruction_kinds(self.instruction_level));
        if !self.enabled_kinds.is_subset(&allowed) {
            return Err(NoiseError::InvalidProfile("kinds enabled beyond their level".into()));
        }
        Ok(())
    }

    fn scaled(&self, rate: f64, kind: NoiseKind) -> f64 {
        if self.enabled_kinds.contains(&kind) {
            rate * f64::from(self.tool_level) / f64::from(MAX_LEVEL)
        } else {
            0.0
        }
    }
}

fn failure(kind: NoiseKind, detail: &str) -> ToolResult {
    ToolResult {
        status: ToolStatus::TransientFailure,
        payload: Vec::new(),
        effects: Vec::new(),
        detail: Some(detail.to_string()),
        noise: Some(kind),
        extra_latency: 0.0,
    }
}

/// Offset that makes an inconsistent response's ids point at nothing.
pub const PHANTOM_ID_OFFSET: i64 = 1_000_000;

fn apply_kind(mut result: ToolResult, kind: NoiseKind, rates: &ToolNoiseRates) -> ToolResult {
    match kind {
        NoiseKind::ToolFailure => return failure(kind, "transient failure, retry later"),
        NoiseKind::PartialResult => {
            let keep = result.payload.len() / 2;
            result.payload.truncate(keep);
            result.detail = Some("partial result".into());
        }
        NoiseKind::InconsistentResponse => {
            for p in &mut result.payload {
                p.id += PHANTOM_ID_OFFSET;
                p.fields.insert("id".into(), crate::schema::Value::Int(p.id));
            }
        }
        NoiseKind::LatencySpike => result.extra_latency += rates.spike_seconds,
        _ => return result,
    }
    result.noise = Some(kind);
    result
}

fn read_only(result: &ToolResult) -> bool {
    result.effects.is_empty() && !result.payload.is_empty()
}

/// Draws tool noise for one result from the profile's rates. Only ok results are affected.
pub fn inject_tool_noise_with(result: ToolResult, profile: &NoiseProfile, rng: &mut impl Rng) -> ToolResult {
    if profile.tool_level == 0 || !result.is_ok() {
        return result;
    }
    let r = &profile.rates;
    let ro = read_only(&result);
    let table = [
        (NoiseKind::ToolFailure, profile.scaled(r.failure, NoiseKind::ToolFailure), true),
        (NoiseKind::PartialResult, profile.scaled(r.partial, NoiseKind::PartialResult), ro),
        (NoiseKind::InconsistentResponse, profile.scaled(r.inconsistent, NoiseKind::InconsistentResponse), ro),
        (NoiseKind::LatencySpike, profile.scaled(r.latency, NoiseKind::LatencySpike), true),
    ];
    let mut u: f64 = rng.random();
    for (kind, p, applicable) in table {
        if u < p {
            return if applicable { apply_kind(result, kind, r) } else { result };
        }
        u -= p;
    }
    result
}

/// Tool noise at `level` with the default rates.
pub fn inject_tool_noise(result: ToolResult, level: u32, rng: &mut impl Rng) -> ToolResult {
    inject_tool_noise_with(result, &NoiseProfile::at_levels(0, level), rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Random,
    /// Every call that may be noised is noised, cycling through the applicable kinds.
    Adversarial,
}

/// Stateful tool-noise layer used inside episodes.
///
/// A call that was just noised in a way that forces a retry comes back clean
/// on its next attempt, which makes every failure transient.
#[derive(Debug, Clone)]
pub struct NoiseInjector {
    pub profile: NoiseProfile,
    pub mode: NoiseMode,
    pub max_consecutive: u32,
    streak: HashMap<String, u32>,
    cursor: usize,
}

impl NoiseInjector {
    pub fn new(profile: NoiseProfile, mode: NoiseMode) -> Self {
        Self { profile, mode, max_consecutive: 1, streak: HashMap::new(), cursor: 0 }
    }

    pub fn apply(&mut self, call: &ToolCall, result: ToolResult, rng: &mut impl Rng) -> ToolResult {
        if self.profile.permanent_failures.contains(&call.tool) {
            return failure(NoiseKind::ToolFailure, "tool unavailable");
        }
        if !result.is_ok() || self.profile.tool_level == 0 {
            return result;
        }
        let key = serde_json::to_string(call).expect("calls serialize");
        if self.streak.get(&key).copied().unwrap_or(0) >= self.max_consecutive {
            self.streak.remove(&key);
            return result;
        }
        let out = match self.mode {
            NoiseMode::Random => inject_tool_noise_with(result, &self.profile, rng),
            NoiseMode::Adversarial => {
                let ro = read_only(&result);
                let kinds: Vec<NoiseKind> = self
                    .profile
                    .enabled_kinds
                    .iter()
                    .copied()
                    .filter(|k| {
                        k.is_tool() && (ro || !matches!(k, NoiseKind::PartialResult | NoiseKind::InconsistentResponse))
                    })
                    .collect();
                if kinds.is_empty() {
                    result
                } else {
                    let k = kinds[self.cursor % kinds.len()];
                    self.cursor += 1;
                    apply_kind(result, k, &self.profile.rates)
                }
            }
        };
        if out.noise.is_some_and(NoiseKind::needs_retry) {
            *self.streak.entry(key).or_default() += 1;
        } else {
            self.streak.remove(&key);
        }
        out
    }
}

/// Applies instruction noise. The rubric is never touched.
///
/// Level l moves l stated values into the withheld set, adds l − 1 distractors
/// from level 2 and shuffles the description from level 3.
pub fn inject_instruction_noise(task: &Task, level: u32, rng: &mut impl Rng) -> Task {
    let level = level.min(MAX_LEVEL);
    let mut t = task.clone();
    if level == 0 {
        return t;
    }
    let mut keys: Vec<String> = t.explicit.keys().cloned().collect();
    keys.shuffle(rng);
    for key in keys.into_iter().take(level as usize) {
        if let Some(v) = t.explicit.remove(&key) {
            t.noise_log.push(format!("constraint_obfuscation key={key}"));
            t.user_profile.withheld.insert(key, v);
        }
    }
    if level >= 2 {
        let mut pool: Vec<(&String, &crate::schema::Value)> =
            t.decoys.iter().filter(|(k, _)| !t.distractors.iter().any(|d| &d.key == *k)).collect();
        pool.shuffle(rng);
        let picked: Vec<Distractor> = pool
            .into_iter()
            .take(level as usize - 1)
            .map(|(k, v)| Distractor { key: k.clone(), value: v.clone() })
            .collect();
        for d in picked {
            t.noise_log.push(format!("distractor_preference key={} value={}", d.key, d.value));
            t.distractors.push(d);
        }
    }
    if level >= 3 && t.sentence_order.len() >= 2 {
        let before = t.sentence_order.clone();
        while t.sentence_order == before {
            t.sentence_order.shuffle(rng);
        }
        t.noise_log.push("reordering".into());
    }
    t
}

/// Whether a perfect solver with `retry_budget` retries per step finishes the
/// task when every call is noised as badly as the profile allows.
///
/// The user answers every question here, so only noise can make the task fail.
pub fn verify_solvability(
    env: &Environment,
    graph: &ToolGraph,
    task: &Task,
    profile: &NoiseProfile,
    retry_budget: u32,
) -> bool {
    let injector = NoiseInjector::new(profile.clone(), NoiseMode::Adversarial);
    if retry_budget < injector.max_consecutive || profile.validate().is_err() {
        return false;
    }
    let mut noisy = inject_instruction_noise(task, profile.instruction_level, &mut seeded(0));
    noisy.user_profile.cooperativeness = 1.0;
    let solver = ScriptedSolver {
        skill: 1.0,
        noise_handling: 1.0,
        clarification_rate: 1.0,
        retry_budget,
        ..ScriptedSolver::default()
    };
    let steps = gold_plan(env).len() as u32;
    let asks = noisy.user_profile.withheld.len() as u32;
    let limits = EpisodeLimits { max_turns: (steps + asks + 1) * (2 * retry_budget + 3) + 8, max_tokens: u64::MAX };
    let (_, report) = run_episode_with(
        env,
        graph,
        &noisy,
        &solver,
        injector,
        &ContextPolicy::off(),
        &limits,
        &CostModel::default(),
        &mut seeded(0),
    );
    report.reward == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub current_level: u32,
    pub promotion_threshold: f64,
    /// (level evaluated, robustness gap) per step.
    pub history: Vec<(u32, f64)>,
}

impl CurriculumState {
    pub fn new(level: u32, promotion_threshold: f64) -> Self {
        Self { current_level: level, promotion_threshold, history: Vec::new() }
    }

    /// The profile for the current level, stepping down until one is solvable.
    pub fn emit_profile(
        &self,
        env: &Environment,
        graph: &ToolGraph,
        task: &Task,
        retry_budget: u32,
    ) -> Option<NoiseProfile> {
        (0..=self.current_level.min(MAX_LEVEL))
            .rev()
            .map(NoiseProfile::uniform)
            .find(|p| verify_solvability(env, graph, task, p, retry_budget))
    }
}

pub fn robustness_gap(clean_pass: f64, noisy_pass: f64) -> f64 {
    clean_pass - noisy_pass
}

/// Records the gap and promotes one level iff gap ≤ threshold.
pub fn curriculum_step(
    state: &CurriculumState,
    clean_pass: f64,
    noisy_pass: f64,
) -> Result<CurriculumState, NoiseError> {
    for r in [clean_pass, noisy_pass] {
        if !(0.0..=1.0).contains(&r) {
            return Err(NoiseError::InvalidRate(r));
        }
    }
    let gap = robustness_gap(clean_pass, noisy_pass);
    let mut next = state.clone();
    next.history.push((state.current_level, gap));
    if gap <= state.promotion_threshold {
        next.current_level += 1;
    }
    Ok(next)
}
