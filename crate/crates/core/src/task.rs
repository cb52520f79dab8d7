//! Rubric-bearing tasks grounded on an environment's gold chains.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{bind_call, record_binding};
use crate::domain::{EffectKind, SlotRole, SlotSource, TableEffect, ToolAction, ToolGraph, ToolSpec, ValueKind};
use crate::env::Environment;
use crate::exec::{apply_tool, AppliedEffect, ExecError, ToolCall, ToolResult};
use crate::schema::{DatabaseState, EntityId, RowChange, Value};

/// Key of one user-provided argument: `c{chain}.s{step}.{slot}`.
pub fn slot_key(chain: usize, step: usize, slot: &str) -> String {
    format!("c{chain}.s{step}.{slot}")
}

/// Prefix shared by every key of one plan step.
pub fn step_prefix(chain: usize, step: usize) -> String {
    format!("c{chain}.s{step}.")
}

/// One step of the gold plan: all gold chains concatenated in order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub chain: usize,
    pub step: usize,
    pub tool: String,
    pub user_args: BTreeMap<String, Value>,
}

impl PlanStep {
    pub fn key(&self, slot: &str) -> String {
        slot_key(self.chain, self.step, slot)
    }
}

pub fn gold_plan(env: &Environment) -> Vec<PlanStep> {
    env.gold_chains
        .iter()
        .enumerate()
        .flat_map(|(k, g)| {
            g.chain.tools.iter().enumerate().map(move |(j, t)| PlanStep {
                chain: k,
                step: j,
                tool: t.clone(),
                user_args: g.user_args[j].clone(),
            })
        })
        .collect()
}

/// Replays plan steps in place, optionally skipping one. Bindings are scoped per chain.
pub fn replay_plan(
    db: &mut DatabaseState,
    graph: &ToolGraph,
    plan: &[PlanStep],
    skip: Option<usize>,
) -> Result<Vec<(ToolCall, ToolResult)>, ExecError> {
    let mut bindings: BTreeMap<String, EntityId> = BTreeMap::new();
    let mut chain = usize::MAX;
    let mut out = Vec::with_capacity(plan.len());
    for (i, step) in plan.iter().enumerate() {
        if step.chain != chain {
            bindings.clear();
            chain = step.chain;
        }
        if skip == Some(i) {
            continue;
        }
        let spec = graph.tool(&step.tool).ok_or_else(|| ExecError::UnknownTool(step.tool.clone()))?;
        let call = bind_call(spec, &step.user_args, &bindings);
        let result = apply_tool(db, &call, graph)?;
        record_binding(spec, &result, &mut bindings);
        out.push((call, result));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    Equals { column: String, value: Value },
    Absent,
}

/// A final-state predicate on the row of `table` with the given id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub table: String,
    pub id: EntityId,
    #[serde(flatten)]
    pub check: Check,
}

impl Predicate {
    pub fn holds(&self, db: &DatabaseState) -> bool {
        let row = db.row(&self.table, self.id);
        match &self.check {
            Check::Absent => row.is_none(),
            Check::Equals { column, value } => row.and_then(|r| r.get(column)) == Some(value),
        }
    }
}

/// Acceptance rule: every predicate holds and no forbidden effect occurred.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    pub final_state_predicates: Vec<Predicate>,
    pub forbidden_effects: Vec<TableEffect>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RubricOutcome {
    pub satisfied: usize,
    pub total: usize,
    pub forbidden_triggered: Vec<TableEffect>,
}

impl RubricOutcome {
    pub fn accepted(&self) -> bool {
        self.satisfied == self.total && self.forbidden_triggered.is_empty()
    }
}

impl Rubric {
    /// Builds predicates from the changes a plan makes, and forbids every
    /// (table, effect) pair the plan never performs.
    pub fn from_replay(
        schema_tables: impl IntoIterator<Item = String>,
        before: &DatabaseState,
        after: &DatabaseState,
        effects: &[AppliedEffect],
    ) -> Self {
        let mut preds = Vec::new();
        // Ids are reused after a delete, so a re-inserted row can look like a partial update.
        let reinserted: BTreeSet<(String, EntityId)> =
            inserted_rows(effects).into_iter().filter(|(t, id)| before.row(t, *id).is_some()).collect();
        for (table, id) in &reinserted {
            if let Some(row) = after.row(table, *id) {
                for (column, value) in row {
                    if column != "id" {
                        let check = Check::Equals { column: column.clone(), value: value.clone() };
                        preds.push(Predicate { table: table.clone(), id: *id, check });
                    }
                }
            }
        }
        for (table, id) in inserted_rows(effects) {
            if before.row(&table, id).is_none() && after.row(&table, id).is_none() {
                preds.push(Predicate { table, id, check: Check::Absent });
            }
        }
        for change in before.diff(after) {
            match change {
                RowChange::Updated { ref table, id, .. } if reinserted.contains(&(table.clone(), id)) => {}
                RowChange::Inserted { table, id, row } => {
                    for (column, value) in row {
                        if column != "id" {
                            preds.push(Predicate { table: table.clone(), id, check: Check::Equals { column, value } });
                        }
                    }
                }
                RowChange::Updated { table, id, column, value } => {
                    preds.push(Predicate { table, id, check: Check::Equals { column, value } })
                }
                RowChange::Deleted { table, id } => preds.push(Predicate { table, id, check: Check::Absent }),
            }
        }
        let performed: BTreeSet<TableEffect> =
            effects.iter().map(|e| TableEffect { table: e.table.clone(), effect: e.effect }).collect();
        let mut forbidden = Vec::new();
        for table in schema_tables {
            for effect in [EffectKind::Insert, EffectKind::Update, EffectKind::Delete] {
                let te = TableEffect { table: table.clone(), effect };
                if !performed.contains(&te) {
                    forbidden.push(te);
                }
            }
        }
        Self { final_state_predicates: preds, forbidden_effects: forbidden }
    }

    pub fn check(&self, db: &DatabaseState, effects: &[AppliedEffect]) -> RubricOutcome {
        let satisfied = self.final_state_predicates.iter().filter(|p| p.holds(db)).count();
        let forbidden: BTreeSet<&TableEffect> = self.forbidden_effects.iter().collect();
        let triggered: BTreeSet<TableEffect> = effects
            .iter()
            .map(|e| TableEffect { table: e.table.clone(), effect: e.effect })
            .filter(|te| forbidden.contains(te))
            .collect();
        RubricOutcome {
            satisfied,
            total: self.final_state_predicates.len(),
            forbidden_triggered: triggered.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disclosure {
    /// Every constraint is stated up front.
    Full,
    /// Some constraints are only revealed when asked.
    OnRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    /// Multiplier on user message length.
    pub verbosity: f64,
    /// Probability that the user answers a clarification question.
    pub cooperativeness: f64,
    pub disclosure: Disclosure,
    /// Values the user knows but did not state.
    pub withheld: BTreeMap<String, Value>,
}

/// A misleading alternative value mentioned alongside a real constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distractor {
    pub key: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub domain: String,
    /// Description templates, one per plan step; `{key}` placeholders name user arguments.
    pub sentences: Vec<String>,
    /// Values stated in the description.
    pub explicit: BTreeMap<String, Value>,
    pub user_profile: UserProfile,
    pub distractors: Vec<Distractor>,
    /// Plausible wrong values for stated fields, drawn on by distractor noise.
    pub decoys: BTreeMap<String, Value>,
    /// Sentences appear in this order when rendered.
    pub sentence_order: Vec<usize>,
    pub noise_log: Vec<String>,
    pub rubric: Rubric,
}

impl Task {
    pub fn description(&self) -> String {
        let mut parts: Vec<String> = self.sentence_order.iter().map(|&i| self.render(&self.sentences[i])).collect();
        for d in &self.distractors {
            let slot = d.key.rsplit('.').next().unwrap_or(&d.key);
            parts.push(format!("I was also thinking about {} for the {slot}, though I am not sure.", d.value));
        }
        parts.join(" ")
    }

    fn render(&self, template: &str) -> String {
        let mut out = String::new();
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..].find('}').map(|c| open + c).unwrap_or(rest.len() - 1);
            let key = &rest[open + 1..close];
            match self.explicit.get(key) {
                Some(v) => out.push_str(&v.to_string()),
                None => out.push_str("(to be confirmed)"),
            }
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        out
    }

    /// Keys of all user arguments, stated or withheld.
    pub fn all_keys(&self) -> BTreeSet<String> {
        self.explicit.keys().chain(self.user_profile.withheld.keys()).cloned().collect()
    }

    /// True when the description order was shuffled by instruction noise.
    pub fn is_reordered(&self) -> bool {
        self.sentence_order.iter().enumerate().any(|(i, &j)| i != j)
    }
}

fn sentence(spec: &ToolSpec, step: &PlanStep) -> String {
    let user = |name: &str| step.user_args.contains_key(name);
    let target = spec.target_slot().map(|s| {
        if user(&s.name) {
            format!("{} #{{{}}}", spec.entity, step.key(&s.name))
        } else {
            format!("that {}", spec.entity)
        }
    });
    let fields: Vec<String> = spec
        .inputs
        .iter()
        .filter(|s| s.role == SlotRole::Field && user(&s.name))
        .map(|s| format!("{} {{{}}}", s.column.as_deref().unwrap_or(&s.name), step.key(&s.name)))
        .collect();
    let refs: Vec<String> = spec
        .inputs
        .iter()
        .filter(|s| s.role == SlotRole::Reference && user(&s.name))
        .map(|s| format!("{} #{{{}}}", s.entity.as_deref().unwrap_or("record"), step.key(&s.name)))
        .collect();
    let with =
        |items: &[String]| if items.is_empty() { String::new() } else { format!(" with {}", items.join(" and ")) };
    let target = target.unwrap_or_else(|| format!("the {}", spec.entity));
    match spec.action {
        ToolAction::Create => {
            let mut items = refs.clone();
            items.extend(fields);
            format!("Create a new {}{}.", spec.entity, with(&items))
        }
        ToolAction::Lookup => format!("Look up {target}{}.", with(&refs)),
        ToolAction::Update => {
            let constant = spec.inputs.iter().find_map(|s| match &s.source {
                SlotSource::Constant { value } if s.role == SlotRole::Field => Some(value.to_string()),
                _ => None,
            });
            match constant {
                Some(status) => format!("Mark {target} as {status}{}.", with(&refs)),
                None => format!("Update {target}, setting {}{}.", fields.join(" and "), with(&refs)),
            }
        }
        ToolAction::Cancel => format!("Cancel {target}{}.", with(&refs)),
        ToolAction::Delete => format!("Remove {target}{}.", with(&refs)),
    }
}

/// A decoy value of the same kind as `value`, never equal to it.
pub fn decoy(kind: ValueKind, enum_values: &[String], value: &Value, rng: &mut impl Rng) -> Option<Value> {
    match kind {
        ValueKind::Scalar => {
            value.as_int().map(|v| Value::Int(v % 999 + 1 + rng.random_range(0..5))).filter(|d| d != value)
        }
        ValueKind::Text => Some(Value::text(format!("{}_alt", value))),
        ValueKind::Enum => {
            let others: Vec<&String> = enum_values.iter().filter(|e| Some(e.as_str()) != value.as_text()).collect();
            (!others.is_empty()).then(|| Value::text(others[rng.random_range(0..others.len())].clone()))
        }
        ValueKind::EntityId => None,
    }
}

/// Builds a task from the full gold plan. The rubric is read off the replayed post-state.
pub fn generate_task(env: &Environment, graph: &ToolGraph, rng: &mut impl Rng) -> Result<Task, ExecError> {
    let plan = gold_plan(env);
    let mut sentences = Vec::with_capacity(plan.len());
    let mut all = BTreeMap::new();
    let mut decoys = BTreeMap::new();
    for step in &plan {
        let spec = graph.tool(&step.tool).ok_or_else(|| ExecError::UnknownTool(step.tool.clone()))?;
        sentences.push(sentence(spec, step));
        for (name, v) in &step.user_args {
            all.insert(step.key(name), v.clone());
            if let Some(d) = spec.slot(name).and_then(|s| decoy(s.value_kind, &s.enum_values, v, rng)) {
                decoys.insert(step.key(name), d);
            }
        }
    }

    let disclosure = if rng.random::<f64>() < 0.5 { Disclosure::Full } else { Disclosure::OnRequest };
    let verbosity = rng.random_range(0.5..=2.0);
    let cooperativeness = rng.random_range(0.6..=1.0);
    let mut explicit = BTreeMap::new();
    let mut withheld = BTreeMap::new();
    for (k, v) in all {
        if disclosure == Disclosure::OnRequest && rng.random::<f64>() < 0.25 {
            withheld.insert(k, v);
        } else {
            explicit.insert(k, v);
        }
    }

    let mut db = env.db.clone();
    let steps = replay_plan(&mut db, graph, &plan, None)?;
    let effects: Vec<AppliedEffect> = steps.iter().flat_map(|(_, r)| r.effects.iter().cloned()).collect();
    let rubric = Rubric::from_replay(graph.schema().tables.keys().cloned(), &env.db, &db, &effects);

    let n = sentences.len();
    Ok(Task {
        id: format!("{}-task-{:08x}", env.domain, rng.random::<u32>()),
        domain: env.domain.clone(),
        sentences,
        explicit,
        user_profile: UserProfile { verbosity, cooperativeness, disclosure, withheld },
        distractors: Vec::new(),
        decoys,
        sentence_order: (0..n).collect(),
        noise_log: Vec::new(),
        rubric,
    })
}

fn inserted_rows(effects: &[AppliedEffect]) -> BTreeSet<(String, EntityId)> {
    effects.iter().filter(|e| e.effect == EffectKind::Insert).map(|e| (e.table.clone(), e.id)).collect()
}

/// Details of a rubric consistency check.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RubricAudit {
    pub trials_accepted: usize,
    pub trials: usize,
    /// Ablations that change the final state.
    pub required_ablations: usize,
    pub rejected_ablations: usize,
    /// Predicates on cells the gold plan neither changes nor inserts.
    pub idle_predicates: usize,
}

impl RubricAudit {
    pub fn passed(&self) -> bool {
        self.trials >= 2
            && self.trials_accepted == self.trials
            && self.required_ablations > 0
            && self.rejected_ablations == self.required_ablations
            && self.idle_predicates == 0
    }
}

pub fn audit_rubric(task: &Task, env: &Environment, graph: &ToolGraph, trials: usize) -> RubricAudit {
    let plan = gold_plan(env);
    let rubric = &task.rubric;
    let mut audit = RubricAudit { trials, ..RubricAudit::default() };
    let run = |skip| {
        let mut db = env.db.clone();
        let steps = replay_plan(&mut db, graph, &plan, skip).ok()?;
        let effects: Vec<AppliedEffect> = steps.iter().flat_map(|(_, r)| r.effects.iter().cloned()).collect();
        let all_ok = steps.iter().all(|(_, r)| r.is_ok());
        Some((db, effects, all_ok))
    };

    let mut gold_db = None;
    let mut gold_effects = None;
    for _ in 0..trials {
        if let Some((db, effects, all_ok)) = run(None) {
            if all_ok && rubric.check(&db, &effects).accepted() {
                audit.trials_accepted += 1;
            }
            gold_db = Some(db);
            gold_effects = Some(effects);
        }
    }
    let Some(gold_db) = gold_db else { return audit };

    for skip in 0..plan.len() {
        let Some((db, effects, _)) = run(Some(skip)) else { continue };
        if db != gold_db {
            audit.required_ablations += 1;
            if !rubric.check(&db, &effects).accepted() {
                audit.rejected_ablations += 1;
            }
        }
    }

    let inserted = gold_effects.as_deref().map(inserted_rows).unwrap_or_default();
    audit.idle_predicates = rubric
        .final_state_predicates
        .iter()
        .filter(|p| {
            let written = inserted.contains(&(p.table.clone(), p.id)) || !p.holds(&env.db);
            !written || !p.holds(&gold_db)
        })
        .count();
    audit
}

/// Gold replays satisfy the rubric in every trial; every state-changing one-step
/// ablation is rejected; every predicate is on a cell the gold plan changes or inserts.
pub fn validate_rubric(task: &Task, env: &Environment, graph: &ToolGraph, trials: usize) -> bool {
    audit_rubric(task, env, graph, trials).passed()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{GroundedChain, ToolChain};
    use crate::domain::{generate_domain, DomainGenConfig};
    use crate::env::{assemble_environment, EnvConfig, EnvSubgraph};
    use crate::exec::fixtures;
    use crate::rng::seeded;

    fn shop_env() -> (ToolGraph, Environment) {
        let g = fixtures::graph();
        let mut db = fixtures::db_with_customer();
        for _ in 0..16 {
            db.insert("orders", fixtures::order_row(1));
        }
        let mut a0 = BTreeMap::new();
        a0.insert("customer_id".to_string(), Value::Int(1));
        let mut a1 = BTreeMap::new();
        a1.insert("quantity".to_string(), Value::Int(3));
        let chain = GroundedChain {
            chain: ToolChain { tools: vec!["get_customer".into(), "create_order".into()], domain: "shop".into() },
            user_args: vec![a0, a1],
        };
        let included: BTreeSet<String> = ["get_customer", "create_order"].iter().map(|s| s.to_string()).collect();
        let remaining = g.tools().iter().map(|t| t.id.clone()).filter(|t| !included.contains(t)).collect();
        let env = Environment {
            domain: "shop".into(),
            subgraph: EnvSubgraph { included, remaining, seed_chains: vec![chain.chain.clone()] },
            db,
            gold_chains: vec![chain],
            complexity: 2.0,
            provenance: vec![],
        };
        (g, env)
    }

    #[test]
    fn created_row_yields_status_predicate() {
        let (g, env) = shop_env();
        let task = generate_task(&env, &g, &mut seeded(1)).unwrap();
        let want = Predicate {
            table: "orders".into(),
            id: 17,
            check: Check::Equals { column: "status".into(), value: Value::text("created") },
        };
        assert!(task.rubric.final_state_predicates.contains(&want));
        assert!(task
            .rubric
            .forbidden_effects
            .contains(&TableEffect { table: "orders".into(), effect: EffectKind::Delete }));
        assert!(!task
            .rubric
            .forbidden_effects
            .contains(&TableEffect { table: "orders".into(), effect: EffectKind::Insert }));
    }

    #[test]
    fn generation_is_deterministic() {
        let (g, env) = shop_env();
        let a = generate_task(&env, &g, &mut seeded(5)).unwrap();
        let b = generate_task(&env, &g, &mut seeded(5)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn description_mentions_explicit_values() {
        let (g, env) = shop_env();
        let mut task = generate_task(&env, &g, &mut seeded(2)).unwrap();
        let all: BTreeMap<String, Value> = task.user_profile.withheld.clone();
        task.explicit.extend(all);
        task.user_profile.withheld.clear();
        let text = task.description();
        assert!(text.contains("customer #1"), "{text}");
        assert!(text.contains("quantity 3"), "{text}");
    }

    #[test]
    fn well_formed_rubric_validates() {
        let (g, env) = shop_env();
        let task = generate_task(&env, &g, &mut seeded(1)).unwrap();
        assert!(validate_rubric(&task, &env, &g, 2));
        assert!(!validate_rubric(&task, &env, &g, 1));
    }

    #[test]
    fn predicate_on_untouched_row_fails_validation() {
        let (g, env) = shop_env();
        let mut task = generate_task(&env, &g, &mut seeded(1)).unwrap();
        task.rubric.final_state_predicates.push(Predicate {
            table: "orders".into(),
            id: 2,
            check: Check::Equals { column: "status".into(), value: Value::text("active") },
        });
        assert!(!validate_rubric(&task, &env, &g, 3));
    }

    #[test]
    fn generated_tasks_validate() {
        for seed in 0..12u64 {
            let (_, g) =
                generate_domain(seed, &DomainGenConfig { style: seed as u32, ..DomainGenConfig::default() }).unwrap();
            let env = assemble_environment(&g, &EnvConfig::default(), &mut seeded(seed)).unwrap();
            let task = generate_task(&env, &g, &mut seeded(seed + 100)).unwrap();
            let audit = audit_rubric(&task, &env, &g, 2);
            assert!(audit.passed(), "seed {seed}: {audit:?}");
        }
    }

    fn effect(table: &str, effect: EffectKind, id: EntityId) -> AppliedEffect {
        AppliedEffect { table: table.into(), effect, id }
    }

    #[test]
    fn reused_id_pins_every_column() {
        let before = fixtures::db_with_customer();
        let mut after = before.clone();
        after.tables.get_mut("customers").unwrap().remove(&1);
        let mut row = before.row("customers", 1).unwrap().clone();
        row.insert("status".into(), Value::text("created"));
        after.insert("customers", row.clone());
        let effects = [effect("customers", EffectKind::Delete, 1), effect("customers", EffectKind::Insert, 1)];
        let rubric = Rubric::from_replay(["customers".to_string()], &before, &after, &effects);
        let pinned: BTreeSet<&str> = rubric
            .final_state_predicates
            .iter()
            .filter_map(|p| match &p.check {
                Check::Equals { column, .. } => Some(column.as_str()),
                Check::Absent => None,
            })
            .collect();
        let want: BTreeSet<&str> = row.keys().map(String::as_str).filter(|c| *c != "id").collect();
        assert_eq!(pinned, want);
    }

    #[test]
    fn transient_row_must_stay_absent() {
        let before = fixtures::db_with_customer();
        let effects = [effect("orders", EffectKind::Insert, 1), effect("orders", EffectKind::Delete, 1)];
        let rubric = Rubric::from_replay(["orders".to_string()], &before, &before, &effects);
        let want = Predicate { table: "orders".into(), id: 1, check: Check::Absent };
        assert_eq!(rubric.final_state_predicates, vec![want]);
        let mut leftover = before.clone();
        leftover.insert("orders", fixtures::order_row(1));
        assert!(!rubric.check(&leftover, &effects[..1]).accepted());
    }

    #[test]
    fn ablated_plans_fail_the_rubric() {
        let (_, g) = generate_domain(4, &DomainGenConfig::default()).unwrap();
        let env = assemble_environment(&g, &EnvConfig::default(), &mut seeded(4)).unwrap();
        let task = generate_task(&env, &g, &mut seeded(4)).unwrap();
        let plan = gold_plan(&env);
        let mut gold = env.db.clone();
        replay_plan(&mut gold, &g, &plan, None).unwrap();
        for skip in 0..plan.len() {
            let mut db = env.db.clone();
            let steps = replay_plan(&mut db, &g, &plan, Some(skip)).unwrap();
            let effects: Vec<AppliedEffect> = steps.iter().flat_map(|(_, r)| r.effects.clone()).collect();
            assert_eq!(db == gold, task.rubric.check(&db, &effects).accepted(), "skip {skip}");
        }
    }
}
