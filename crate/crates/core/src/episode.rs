//! Episode loop: a scripted solver works through a task against a cloned
//! environment database, with tool noise, a template user and context policies.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::{
    apply_policy, compact, live_tokens, ContextAction, ContextItem, ContextPolicy, ContextState, IdEntry,
};
use crate::domain::{ToolGraph, ToolSpec, ValueKind};
use crate::env::Environment;
use crate::exec::{commit, evaluate, AppliedEffect, ToolCall, ToolResult, ToolStatus};
use crate::noise::{NoiseInjector, NoiseKind, NoiseMode, NoiseProfile};
use crate::schema::{DatabaseState, EntityId, Value};
use crate::styles;
use crate::task::{gold_plan, step_prefix, PlanStep, Rubric, Task};

/// Parametric stand-in for a policy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedSolver {
    /// Probability of issuing the correct next call.
    pub skill: f64,
    /// Probability of handling a noisy tool response without a wasted turn.
    pub noise_handling: f64,
    /// Probability of asking for a missing value instead of guessing it.
    pub clarification_rate: f64,
    /// Noise-induced retries allowed per step before giving up.
    pub retry_budget: u32,
    /// Turns since the last context reset after which skill decays.
    pub focus_horizon: Option<u32>,
    /// Skill multiplier past the focus horizon.
    pub focus_decay: f64,
}

impl Default for ScriptedSolver {
    fn default() -> Self {
        Self {
            skill: 0.9,
            noise_handling: 0.9,
            clarification_rate: 0.9,
            retry_budget: 3,
            focus_horizon: None,
            focus_decay: 0.5,
        }
    }
}

impl ScriptedSolver {
    pub fn with_skill(skill: f64) -> Self {
        Self { skill, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("skill", self.skill),
            ("noise_handling", self.noise_handling),
            ("clarification_rate", self.clarification_rate),
            ("focus_decay", self.focus_decay),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeLimits {
    pub max_turns: u32,
    /// Largest live context, in tokens.
    pub max_tokens: u64,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self { max_turns: 200, max_tokens: 128_000 }
    }
}

/// Synthetic token and time costs of trajectory events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub prompt_base: u64,
    pub per_sentence: u64,
    pub agent: u64,
    pub call: u64,
    pub result_base: u64,
    pub per_field: u64,
    /// Multiplier on tool result size; large values model document-heavy tools.
    pub result_scale: f64,
    pub user: u64,
    pub recall: u64,
    pub agent_seconds: f64,
    pub tool_seconds: f64,
    pub user_seconds: f64,
    pub context_seconds: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            prompt_base: 400,
            per_sentence: 25,
            agent: 60,
            call: 30,
            result_base: 40,
            per_field: 6,
            result_scale: 1.0,
            user: 40,
            recall: 20,
            agent_seconds: 1.0,
            tool_seconds: 0.5,
            user_seconds: 2.0,
            context_seconds: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    AgentMessage { text: String },
    ToolCall { call: ToolCall },
    ToolResult { result: ToolResult },
    UserMessage { text: String, revealed: Vec<(String, Value)> },
    Context { action: ContextAction, tokens_before: u64, tokens_after: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajEvent {
    pub seq: u64,
    pub turn: u32,
    /// Simulated completion time in seconds.
    pub time: f64,
    pub duration: f64,
    pub tokens: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    TurnLimit,
    TokenLimit,
    GaveUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub policy_version: u32,
    pub events: Vec<TrajEvent>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self { task_id: task_id.into(), policy_version: 0, events: Vec::new(), termination: Termination::Completed }
    }

    pub fn turns(&self) -> u32 {
        self.events.iter().map(|e| e.turn).max().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.events.iter().map(|e| e.tokens).sum()
    }

    /// Tool calls paired with their results, in order.
    pub fn tool_exchanges(&self) -> Vec<(&ToolCall, &ToolResult)> {
        let mut out = Vec::new();
        let mut pending = None;
        for e in &self.events {
            match &e.kind {
                EventKind::ToolCall { call } => pending = Some(call),
                EventKind::ToolResult { result } => {
                    if let Some(c) = pending.take() {
                        out.push((c, result));
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("events serialize"));
            s.push('\n');
        }
        s
    }

    pub fn check(&self) -> Result<(), String> {
        let mut last = 0.0;
        let mut open_call = false;
        for e in &self.events {
            if !(e.time > last) {
                return Err(format!("event {} not strictly after its predecessor", e.seq));
            }
            last = e.time;
            match e.kind {
                EventKind::ToolCall { .. } => open_call = true,
                EventKind::ToolResult { .. } if !open_call => return Err(format!("result {} without a call", e.seq)),
                EventKind::ToolResult { .. } => open_call = false,
                _ if open_call => return Err(format!("call before {} has no result", e.seq)),
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardReport {
    pub task_id: String,
    pub reward: u8,
    pub predicates_satisfied: usize,
    pub predicates_total: usize,
    pub forbidden_triggered: usize,
    pub turns: u32,
    pub tokens: u64,
    pub termination: Termination,
}

/// Replays the trajectory's tool calls on a fresh database and scores the final state.
///
/// Calls whose result was a transient failure never reached the database and are skipped.
pub fn evaluate_trajectory(traj: &Trajectory, env: &Environment, graph: &ToolGraph, rubric: &Rubric) -> RewardReport {
    let mut db = env.db.clone();
    let mut effects: Vec<AppliedEffect> = Vec::new();
    for (call, logged) in traj.tool_exchanges() {
        if logged.status == ToolStatus::TransientFailure {
            continue;
        }
        if let Ok((result, mutation)) = evaluate(&db, call, graph) {
            if let Some(m) = mutation {
                commit(&mut db, m);
            }
            effects.extend(result.effects);
        }
    }
    let outcome = rubric.check(&db, &effects);
    RewardReport {
        task_id: traj.task_id.clone(),
        reward: u8::from(outcome.accepted()),
        predicates_satisfied: outcome.satisfied,
        predicates_total: outcome.total,
        forbidden_triggered: outcome.forbidden_triggered.len(),
        turns: traj.turns(),
        tokens: traj.total_tokens(),
        termination: traj.termination,
    }
}

struct Recorder {
    traj: Trajectory,
    time: f64,
    turn: u32,
}

impl Recorder {
    fn push(&mut self, kind: EventKind, tokens: u64, duration: f64) {
        self.time += duration;
        let seq = self.traj.events.len() as u64;
        self.traj.events.push(TrajEvent { seq, turn: self.turn, time: self.time, duration, tokens, kind });
    }
}

/// What happened to the step being worked on.
#[derive(Default)]
struct StepState {
    reread: bool,
    retries: u32,
    /// Withheld keys the solver must ask about rather than guess.
    must_ask: BTreeSet<String>,
    /// Ask-or-guess choice, drawn once per step.
    asks: Option<bool>,
    guesses: BTreeMap<String, Value>,
    confused: bool,
}

fn context_binding(items: &[ContextItem], tool: &str, kind: &str) -> Option<EntityId> {
    for item in items.iter().rev() {
        match item {
            ContextItem::ToolResult { tool: t, ids, .. } if t == tool => {
                if let Some((_, id)) = ids.iter().find(|(k, _)| k == kind) {
                    return Some(*id);
                }
            }
            ContextItem::Recall { entry, .. } if entry.tool == tool && entry.kind == kind => return Some(entry.id),
            ContextItem::Digest(d) => {
                if let Some(e) = d.ids.iter().rev().find(|e| e.tool == tool && e.kind == kind) {
                    return Some(e.id);
                }
                for v in d.verbatim.iter().rev() {
                    if let ContextItem::ToolResult { tool: t, ids, .. } = v {
                        if t == tool {
                            if let Some((_, id)) = ids.iter().find(|(k, _)| k == kind) {
                                return Some(*id);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    None
}

fn revealed(items: &[ContextItem]) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    for item in items {
        if let ContextItem::User { revealed, .. } = item {
            for (k, v) in revealed {
                out.insert(k.clone(), v.clone());
            }
        }
    }
    out
}

fn guess(spec: &ToolSpec, slot_name: &str, db: &DatabaseState, graph: &ToolGraph, rng: &mut impl Rng) -> Value {
    let Some(slot) = spec.slot(slot_name) else { return Value::Null };
    match slot.value_kind {
        ValueKind::Scalar => Value::Int(rng.random_range(1..=999)),
        ValueKind::Text => Value::text(styles::WORDS[rng.random_range(0..styles::WORDS.len())]),
        ValueKind::Enum if !slot.enum_values.is_empty() => {
            Value::text(slot.enum_values[rng.random_range(0..slot.enum_values.len())].clone())
        }
        ValueKind::Enum => Value::Null,
        ValueKind::EntityId => {
            let ids: Vec<EntityId> = slot
                .entity
                .as_deref()
                .and_then(|k| graph.schema().table_of(k))
                .and_then(|t| db.tables.get(t))
                .map(|rows| rows.keys().copied().collect())
                .unwrap_or_default();
            Value::Int(if ids.is_empty() { 1 } else { ids[rng.random_range(0..ids.len())] })
        }
    }
}

/// Runs one episode with randomly drawn tool noise from `noise`.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    env: &Environment,
    graph: &ToolGraph,
    task: &Task,
    solver: &ScriptedSolver,
    noise: &NoiseProfile,
    policy: &ContextPolicy,
    limits: &EpisodeLimits,
    rng: &mut impl Rng,
) -> (Trajectory, RewardReport) {
    let injector = NoiseInjector::new(noise.clone(), NoiseMode::Random);
    run_episode_with(env, graph, task, solver, injector, policy, limits, &CostModel::default(), rng)
}

/// Episode loop with an explicit noise layer and cost model.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_with(
    env: &Environment,
    graph: &ToolGraph,
    task: &Task,
    solver: &ScriptedSolver,
    mut injector: NoiseInjector,
    policy: &ContextPolicy,
    limits: &EpisodeLimits,
    costs: &CostModel,
    rng: &mut impl Rng,
) -> (Trajectory, RewardReport) {
    let plan: Vec<PlanStep> = gold_plan(env);
    let mut db = env.db.clone();
    let prompt_tokens = costs.prompt_base + costs.per_sentence * (task.sentences.len() + task.distractors.len()) as u64;
    let mut items = vec![ContextItem::Prompt { tokens: prompt_tokens }];
    let mut ctx = ContextState::new(prompt_tokens);
    let mut rec = Recorder { traj: Trajectory::new(task.id.clone()), time: 0.0, turn: 0 };
    let mut truth: BTreeMap<(usize, String), EntityId> = BTreeMap::new();
    let decoys: BTreeMap<&str, &Value> = task.distractors.iter().map(|d| (d.key.as_str(), &d.value)).collect();

    let mut p = 0usize;
    let mut redo: Option<usize> = None;
    let mut st = StepState::default();
    let scaled = |n: u64, f: f64| (n as f64 * f).round() as u64;

    let termination = loop {
        let current = redo.unwrap_or(p);
        if current >= plan.len() {
            rec.turn += 1;
            rec.push(
                EventKind::AgentMessage { text: "All requested changes are done.".into() },
                costs.agent,
                costs.agent_seconds,
            );
            break Termination::Completed;
        }
        if rec.turn >= limits.max_turns {
            break Termination::TurnLimit;
        }
        rec.turn += 1;
        ctx.turns += 1;
        let step = &plan[current];
        let spec = graph.tool(&step.tool).expect("gold plans use known tools");
        let focused = solver.focus_horizon.is_none_or(|h| ctx.turns <= h);
        let skill = if focused { solver.skill } else { solver.skill * solver.focus_decay };

        'turn: {
            if st.confused {
                st.confused = false;
                rec.push(
                    EventKind::AgentMessage { text: "Misread the last tool response.".into() },
                    costs.agent,
                    costs.agent_seconds,
                );
                items.push(ContextItem::Agent { tokens: costs.agent });
                break 'turn;
            }
            if task.is_reordered() && !st.reread {
                st.reread = true;
                if rng.random::<f64>() >= solver.skill {
                    rec.push(
                        EventKind::AgentMessage { text: "Re-reading the request to order the steps.".into() },
                        costs.agent,
                        costs.agent_seconds,
                    );
                    items.push(ContextItem::Agent { tokens: costs.agent });
                    break 'turn;
                }
            }

            let prefix = step_prefix(step.chain, step.step);
            let known = revealed(&items);
            let missing: Vec<(&String, &Value)> = task
                .user_profile
                .withheld
                .iter()
                .filter(|(k, _)| k.starts_with(&prefix) && !known.contains_key(*k))
                .collect();
            if !missing.is_empty() {
                let must = missing.iter().any(|(k, _)| st.must_ask.contains(*k));
                let asks = *st.asks.get_or_insert_with(|| rng.random::<f64>() < solver.clarification_rate);
                if must || asks {
                    rec.push(
                        EventKind::AgentMessage { text: "Could you confirm the missing details?".into() },
                        costs.agent,
                        costs.agent_seconds,
                    );
                    items.push(ContextItem::Agent { tokens: costs.agent });
                    let tokens = scaled(costs.user, task.user_profile.verbosity);
                    if rng.random::<f64>() < task.user_profile.cooperativeness {
                        let rev: Vec<(String, Value)> =
                            missing.iter().map(|(k, v)| ((*k).clone(), (*v).clone())).collect();
                        let text = rev.iter().map(|(k, v)| format!("{k} is {v}")).collect::<Vec<_>>().join("; ");
                        items.push(ContextItem::User { revealed: rev.clone(), tokens });
                        rec.push(EventKind::UserMessage { text, revealed: rev }, tokens, costs.user_seconds);
                    } else {
                        items.push(ContextItem::User { revealed: vec![], tokens });
                        rec.push(
                            EventKind::UserMessage { text: "I am not sure, just go ahead.".into(), revealed: vec![] },
                            tokens,
                            costs.user_seconds,
                        );
                    }
                    break 'turn;
                }
                for (k, _) in &missing {
                    if !st.guesses.contains_key(*k) {
                        let slot = k.rsplit('.').next().unwrap_or(k);
                        let g = guess(spec, slot, &db, graph, rng);
                        st.guesses.insert((*k).clone(), g);
                    }
                }
            }
            let guesses = st.guesses.clone();

            let mut args: BTreeMap<String, Value> = BTreeMap::new();
            let mut used_binding: Option<String> = None;
            for slot in &spec.inputs {
                let Some(producer) = slot.producer() else { continue };
                let kind = graph.tool(producer).and_then(|t| t.output_entities.first().cloned()).unwrap_or_default();
                match context_binding(&items, producer, &kind) {
                    Some(id) => {
                        args.insert(slot.name.clone(), Value::Int(id));
                        used_binding.get_or_insert_with(|| producer.to_string());
                    }
                    None => match truth.get(&(step.chain, producer.to_string())) {
                        Some(&id) => {
                            let entry = IdEntry { tool: producer.to_string(), kind, id };
                            rec.push(
                                EventKind::AgentMessage {
                                    text: format!("Recovering the {} id from {producer}.", entry.kind),
                                },
                                costs.recall,
                                costs.agent_seconds,
                            );
                            items.push(ContextItem::Recall { entry, tokens: costs.recall });
                            break 'turn;
                        }
                        None => {
                            redo = plan[..current].iter().rposition(|s| s.chain == step.chain && s.tool == producer);
                            rec.push(
                                EventKind::AgentMessage { text: format!("Need {producer} first.").to_string() },
                                costs.agent,
                                costs.agent_seconds,
                            );
                            items.push(ContextItem::Agent { tokens: costs.agent });
                            break 'turn;
                        }
                    },
                }
            }

            if rng.random::<f64>() >= skill {
                let droppable =
                    spec.inputs.iter().find(|s| !matches!(s.source, crate::domain::SlotSource::Constant { .. }));
                match droppable {
                    Some(dropped) => {
                        let mut call = ToolCall::new(spec.id.clone());
                        for s in &spec.inputs {
                            if s.name != dropped.name {
                                if let Some(v) = args.get(&s.name).or_else(|| task.explicit.get(&step.key(&s.name))) {
                                    call.args.insert(s.name.clone(), v.clone());
                                }
                            }
                        }
                        exchange(&mut rec, &mut items, &mut db, graph, &mut injector, call, costs, rng);
                    }
                    None => {
                        rec.push(
                            EventKind::AgentMessage { text: "Unsure which tool to use next.".into() },
                            costs.agent,
                            costs.agent_seconds,
                        );
                        items.push(ContextItem::Agent { tokens: costs.agent });
                    }
                }
                break 'turn;
            }

            let mut guessed = Vec::new();
            for slot in &spec.inputs {
                if !slot.is_user_provided() {
                    continue;
                }
                let key = step.key(&slot.name);
                let mut v = task.explicit.get(&key).or_else(|| known.get(&key)).cloned();
                if v.is_none() {
                    if let Some(g) = guesses.get(&key) {
                        guessed.push(key.clone());
                        v = Some(g.clone());
                    }
                }
                if let Some(d) = decoys.get(key.as_str()) {
                    if rng.random::<f64>() >= solver.skill {
                        v = Some((*d).clone());
                    }
                }
                if let Some(v) = v {
                    args.insert(slot.name.clone(), v);
                }
            }
            let call = ToolCall { tool: spec.id.clone(), args };
            let (shown, truth_result) = exchange(&mut rec, &mut items, &mut db, graph, &mut injector, call, costs, rng);

            match (shown.status, shown.noise) {
                (ToolStatus::Ok, Some(NoiseKind::PartialResult)) => note_retry(&mut st, solver, rng),
                (ToolStatus::Ok, Some(NoiseKind::InconsistentResponse))
                    if rng.random::<f64>() < solver.noise_handling =>
                {
                    st.retries += 1
                }
                (ToolStatus::Ok, _) => {
                    if let (Some(kind), Some(r)) = (spec.output_entities.first(), truth_result.as_ref()) {
                        if let Some(id) = r.entity_id(kind) {
                            truth.insert((step.chain, spec.id.clone()), id);
                        }
                    }
                    if redo.take().is_none() {
                        p += 1;
                    }
                    st = StepState::default();
                }
                (ToolStatus::TransientFailure, _) => note_retry(&mut st, solver, rng),
                _ if !guessed.is_empty() => st.must_ask.extend(guessed),
                _ => match used_binding {
                    Some(producer) if shown.status == ToolStatus::MissingEntity => {
                        redo = plan[..current].iter().rposition(|s| s.chain == step.chain && s.tool == producer);
                    }
                    _ => st.retries += 1,
                },
            }
        }

        if st.retries > solver.retry_budget {
            break Termination::GaveUp;
        }

        ctx.tokens = live_tokens(&items);
        match apply_policy(&ctx, policy) {
            ContextAction::None => {}
            ContextAction::Summarize => {
                let before = ctx.tokens;
                if compact(&mut items, policy.keep_last_k) {
                    ctx.tokens = live_tokens(&items);
                    rec.push(
                        EventKind::Context {
                            action: ContextAction::Summarize,
                            tokens_before: before,
                            tokens_after: ctx.tokens,
                        },
                        0,
                        costs.context_seconds,
                    );
                }
            }
            ContextAction::DiscardAll => {
                let before = ctx.tokens;
                items.truncate(1);
                ctx.discard();
                rec.push(
                    EventKind::Context {
                        action: ContextAction::DiscardAll,
                        tokens_before: before,
                        tokens_after: ctx.tokens,
                    },
                    0,
                    costs.context_seconds,
                );
            }
        }
        if ctx.tokens > limits.max_tokens {
            break Termination::TokenLimit;
        }
    };

    rec.traj.termination = termination;
    let report = evaluate_trajectory(&rec.traj, env, graph, &task.rubric);
    (rec.traj, report)
}

/// Executes one call through the noise layer and logs it. Returns the shown result
/// and, when the call went through, the undisturbed one.
#[allow(clippy::too_many_arguments)]
fn exchange(
    rec: &mut Recorder,
    items: &mut Vec<ContextItem>,
    db: &mut DatabaseState,
    graph: &ToolGraph,
    injector: &mut NoiseInjector,
    call: ToolCall,
    costs: &CostModel,
    rng: &mut impl Rng,
) -> (ToolResult, Option<ToolResult>) {
    let (result, mutation) = evaluate(db, &call, graph).expect("solver calls known tools");
    let shown = injector.apply(&call, result.clone(), rng);
    let committed = shown.status != ToolStatus::TransientFailure;
    if committed {
        if let Some(m) = mutation {
            commit(db, m);
        }
    }
    let result_tokens =
        ((costs.result_base + costs.per_field * shown.field_count() as u64) as f64 * costs.result_scale).round() as u64;
    rec.push(EventKind::ToolCall { call: call.clone() }, costs.call, costs.agent_seconds);
    items.push(ContextItem::ToolCall { tool: call.tool.clone(), tokens: costs.call });
    let ids = shown.payload.iter().map(|p| (p.kind.clone(), p.id)).collect();
    items.push(ContextItem::ToolResult { tool: call.tool.clone(), status: shown.status, ids, tokens: result_tokens });
    rec.push(EventKind::ToolResult { result: shown.clone() }, result_tokens, costs.tool_seconds + shown.extra_latency);
    (shown, committed.then_some(result))
}

fn note_retry(st: &mut StepState, solver: &ScriptedSolver, rng: &mut impl Rng) {
    st.retries += 1;
    if rng.random::<f64>() >= solver.noise_handling {
        st.confused = true;
    }
}
