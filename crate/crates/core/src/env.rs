//! Environment construction: seed chains, database instantiation, dependency-safe
//! expansion, the spawn rule and the minimum-size fallback.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{bind_call, record_binding, replay, ChainTracker, GroundedChain, ToolChain};
use crate::domain::{SlotSource, ToolAction, ToolGraph, ValueKind};
use crate::episode::ScriptedSolver;
use crate::exec::apply_tool;
use crate::schema::{ColumnType, DatabaseState, DomainSchema, EntityId, Row, Value};
use crate::styles;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("no feasible chain of length {min}: {detail}")]
    NoFeasibleChain { min: usize, detail: String },
    #[error("unsatisfiable slot {slot} of tool {tool}: empty enum domain")]
    UnsatisfiableSlot { tool: String, slot: String },
    #[error("graph has {size} tools, fewer than the required {required}")]
    GraphTooSmall { size: usize, required: usize },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

pub type UsageCounts = BTreeMap<String, u32>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSubgraph {
    pub included: BTreeSet<String>,
    pub remaining: BTreeSet<String>,
    pub seed_chains: Vec<ToolChain>,
}

impl EnvSubgraph {
    fn from_included(graph: &ToolGraph, included: BTreeSet<String>, seed_chains: Vec<ToolChain>) -> Self {
        let remaining = graph.tools().iter().map(|t| t.id.clone()).filter(|id| !included.contains(id)).collect();
        Self { included, remaining, seed_chains }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub domain: String,
    pub subgraph: EnvSubgraph,
    pub db: DatabaseState,
    pub gold_chains: Vec<GroundedChain>,
    pub complexity: f64,
    /// One line per construction decision, in order.
    pub provenance: Vec<String>,
}

impl Environment {
    /// Total number of gold steps across chains.
    pub fn plan_len(&self) -> usize {
        self.gold_chains.iter().map(GroundedChain::len).sum()
    }

    /// Verifies the structural invariants of a finished environment.
    pub fn check(&self, graph: &ToolGraph, min_tools: usize) -> Result<(), String> {
        let sub = &self.subgraph;
        if sub.included.len() < min_tools.min(graph.len()) {
            return Err(format!("only {} tools included, need {}", sub.included.len(), min_tools.min(graph.len())));
        }
        if sub.included.intersection(&sub.remaining).next().is_some() {
            return Err("included and remaining overlap".into());
        }
        let all: BTreeSet<String> = graph.tools().iter().map(|t| t.id.clone()).collect();
        let union: BTreeSet<String> = sub.included.union(&sub.remaining).cloned().collect();
        if union != all {
            return Err("included and remaining do not cover the graph".into());
        }
        for c in &sub.seed_chains {
            if let Some(t) = c.tools.iter().find(|t| !sub.included.contains(*t)) {
                return Err(format!("seed chain tool {t} not included"));
            }
        }
        self.db.conforms(graph.schema())?;
        for (k, chain) in self.gold_chains.iter().enumerate() {
            let mut db = self.db.clone();
            let steps = replay(&mut db, graph, chain, None).map_err(|e| e.to_string())?;
            if let Some((call, r)) = steps.iter().find(|(_, r)| !r.is_ok()) {
                return Err(format!("gold chain {k} fails at {}: {:?}", call.tool, r.status));
            }
        }
        Ok(())
    }
}

/// Weights of the spawn probability. All must be nonnegative, scales positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpawnWeights {
    pub w_complexity: f64,
    pub w_difficulty: f64,
    pub w_remaining: f64,
    pub c0: f64,
    pub d0: f64,
}

impl Default for SpawnWeights {
    fn default() -> Self {
        Self { w_complexity: 0.2, w_difficulty: 0.4, w_remaining: 0.4, c0: 30.0, d0: 40.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub min_tools: usize,
    pub strict_min_tools: bool,
    /// Inclusive chain length range.
    pub chain_len: (usize, usize),
    pub expansion_budget: usize,
    pub lambda: f64,
    pub tau: f64,
    pub weights: SpawnWeights,
    pub attempt_cap: u32,
    /// Skill of the randomized solver used to measure chain-discovery difficulty.
    pub discovery_skill: f64,
    pub max_seeds: usize,
    /// Consecutive fallback samples that add nothing before the graph counts as exhausted.
    pub fallback_attempts: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            min_tools: 20,
            strict_min_tools: true,
            chain_len: (3, 6),
            expansion_budget: 8,
            lambda: 10.0,
            tau: 0.5,
            weights: SpawnWeights::default(),
            attempt_cap: 16,
            discovery_skill: 0.5,
            max_seeds: 8,
            fallback_attempts: 32,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if self.chain_len.0 < 1 || self.chain_len.0 > self.chain_len.1 {
            return bad("chain_len must satisfy 1 <= min <= max");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        if self.attempt_cap < 1 {
            return bad("attempt_cap must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.discovery_skill) {
            return bad("discovery_skill must lie in [0, 1]");
        }
        if self.max_seeds < 1 {
            return bad("max_seeds must be at least 1");
        }
        check_weights(&self.weights)
    }
}

fn check_weights(w: &SpawnWeights) -> Result<(), EnvError> {
    let all = [w.w_complexity, w.w_difficulty, w.w_remaining];
    if all.iter().any(|x| !(*x >= 0.0)) {
        return Err(EnvError::InvalidConfig("spawn weights must be nonnegative".into()));
    }
    if !(w.c0 > 0.0 && w.d0 > 0.0) {
        return Err(EnvError::InvalidConfig("spawn scales c0 and d0 must be positive".into()));
    }
    Ok(())
}

const RANDOM_CHAIN_ATTEMPTS: usize = 24;
const SEARCH_NODE_BUDGET: usize = 200_000;

fn check_range(range: (usize, usize)) -> Result<(), EnvError> {
    if range.0 < 1 || range.0 > range.1 {
        return Err(EnvError::InvalidConfig(format!("bad length range {range:?}")));
    }
    Ok(())
}

/// Samples a chain from the whole graph. Tool weights are 1/(1 + usage).
pub fn sample_seed_chain(
    graph: &ToolGraph,
    usage: &UsageCounts,
    range: (usize, usize),
    rng: &mut impl Rng,
) -> Result<ToolChain, EnvError> {
    let pool: Vec<usize> = (0..graph.len()).collect();
    sample_chain_in(graph, &pool, usage, range, false, rng)
}

/// Samples a dependency-feasible chain using only tools in `pool`.
///
/// Random forward construction is tried first; if it keeps dead-ending, a
/// bounded depth-first search decides whether any chain of the minimum length
/// exists at all.
pub fn sample_chain_in(
    graph: &ToolGraph,
    pool: &[usize],
    usage: &UsageCounts,
    range: (usize, usize),
    require_write: bool,
    rng: &mut impl Rng,
) -> Result<ToolChain, EnvError> {
    check_range(range)?;
    let weight = |i: usize| 1.0 / (1.0 + f64::from(*usage.get(&graph.tool_at(i).id).unwrap_or(&0)));
    for _ in 0..RANDOM_CHAIN_ATTEMPTS {
        let target = rng.random_range(range.0..=range.1);
        let mut tracker = ChainTracker::new(graph);
        while tracker.len() < target {
            let cands: Vec<usize> = pool.iter().copied().filter(|&i| tracker.can_append(i)).collect();
            if cands.is_empty() {
                break;
            }
            let total: f64 = cands.iter().map(|&i| weight(i)).sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = *cands.last().expect("nonempty");
            for &c in &cands {
                u -= weight(c);
                if u < 0.0 {
                    pick = c;
                    break;
                }
            }
            tracker.append(pick);
        }
        if tracker.len() >= range.0 && (!require_write || tracker.has_write()) {
            return Ok(to_chain(graph, tracker.indices()));
        }
    }
    let mut budget = SEARCH_NODE_BUDGET;
    let mut tracker = ChainTracker::new(graph);
    if search(pool, range.0, require_write, &mut tracker, &mut budget) {
        return Ok(to_chain(graph, tracker.indices()));
    }
    Err(EnvError::NoFeasibleChain {
        min: range.0,
        detail: format!("{} candidate tools in {}", pool.len(), graph.domain()),
    })
}

fn search(pool: &[usize], len: usize, require_write: bool, tracker: &mut ChainTracker<'_>, budget: &mut usize) -> bool {
    if tracker.len() == len {
        return !require_write || tracker.has_write();
    }
    for &i in pool {
        if *budget == 0 {
            return false;
        }
        if !tracker.can_append(i) {
            continue;
        }
        *budget -= 1;
        let saved = tracker.clone();
        tracker.append(i);
        if search(pool, len, require_write, tracker, budget) {
            return true;
        }
        *tracker = saved;
    }
    false
}

fn to_chain(graph: &ToolGraph, indices: &[usize]) -> ToolChain {
    ToolChain {
        tools: indices.iter().map(|&i| graph.tool_at(i).id.clone()).collect(),
        domain: graph.domain().to_string(),
    }
}

/// A schema-conforming row for `table`; references point at existing rows when possible.
pub fn synth_row(schema: &DomainSchema, table: &str, db: &DatabaseState, rng: &mut impl Rng) -> Row {
    let mut row = Row::new();
    for col in schema.columns(table).unwrap_or_default() {
        let v = match &col.ty {
            ColumnType::Id => continue,
            _ if col.name == "status" => Value::text(styles::STATUS_ACTIVE),
            ColumnType::Ref { entity } => {
                let ids: Vec<EntityId> = schema
                    .table_of(entity)
                    .and_then(|t| db.tables.get(t))
                    .map(|rows| rows.keys().copied().collect())
                    .unwrap_or_default();
                if ids.is_empty() {
                    Value::Null
                } else {
                    Value::Int(ids[rng.random_range(0..ids.len())])
                }
            }
            ColumnType::Int => Value::Int(rng.random_range(1..=999)),
            ColumnType::Text => Value::text(styles::WORDS[rng.random_range(0..styles::WORDS.len())]),
            ColumnType::Enum { values } => Value::text(values[rng.random_range(0..values.len())].clone()),
        };
        row.insert(col.name.clone(), v);
    }
    row
}

/// Picks a value for a field slot, different from `current` whenever the domain allows.
fn choose_value(kind: ValueKind, enum_values: &[String], current: Option<&Value>, rng: &mut impl Rng) -> Value {
    match kind {
        ValueKind::Scalar => {
            let v = rng.random_range(1..=999);
            match current {
                Some(Value::Int(c)) if *c == v => Value::Int(v % 999 + 1),
                _ => Value::Int(v),
            }
        }
        ValueKind::Text => {
            let w = styles::WORDS[rng.random_range(0..styles::WORDS.len())];
            match current {
                Some(Value::Text(c)) if c == w => Value::text(format!("{w}_2")),
                _ => Value::text(w),
            }
        }
        ValueKind::Enum => {
            let options: Vec<&String> =
                enum_values.iter().filter(|v| current.and_then(Value::as_text) != Some(v.as_str())).collect();
            let options = if options.is_empty() { enum_values.iter().collect() } else { options };
            Value::text(options[rng.random_range(0..options.len())].clone())
        }
        ValueKind::EntityId => unreachable!("entity slots are bound to rows"),
    }
}

/// Instantiates database rows so that `chain` executes from `base`, never touching existing rows.
///
/// Returns the augmented database and the chain's concrete user arguments.
pub fn instantiate_chain_db(
    chain: &ToolChain,
    graph: &ToolGraph,
    base: &DatabaseState,
    rng: &mut impl Rng,
) -> Result<(DatabaseState, GroundedChain), EnvError> {
    if !crate::chain::is_feasible(graph, &chain.tools) {
        return Err(EnvError::InvalidChain(format!("{:?} is not dependency-feasible", chain.tools)));
    }
    let schema = graph.schema();
    let specs: Vec<_> = chain.tools.iter().map(|t| graph.tool(t).expect("feasible chains use known tools")).collect();
    for spec in &specs {
        for slot in &spec.inputs {
            if slot.is_user_provided() && slot.value_kind == ValueKind::Enum && slot.enum_values.is_empty() {
                return Err(EnvError::UnsatisfiableSlot { tool: spec.id.clone(), slot: slot.name.clone() });
            }
        }
    }

    let mut db = base.clone();
    let mut user_args = vec![BTreeMap::new(); specs.len()];
    for (i, spec) in specs.iter().enumerate() {
        for slot in &spec.inputs {
            if slot.is_user_provided() && slot.value_kind == ValueKind::EntityId {
                let table = slot.entity.as_deref().and_then(|k| schema.table_of(k)).expect("entity slot table");
                let row = synth_row(schema, table, &db, rng);
                let id = db.insert(table, row);
                user_args[i].insert(slot.name.clone(), Value::Int(id));
            }
        }
    }

    let mut scratch = db.clone();
    let mut bindings = BTreeMap::new();
    for (i, spec) in specs.iter().enumerate() {
        let target_id = spec.target_slot().and_then(|slot| match &slot.source {
            SlotSource::ProducedBy { tool } => bindings.get(tool).copied(),
            _ => user_args[i].get(&slot.name).and_then(Value::as_int),
        });
        let table = schema.table_of(&spec.entity).expect("tool entity table");
        for slot in &spec.inputs {
            if !slot.is_user_provided() || slot.value_kind == ValueKind::EntityId {
                continue;
            }
            let current = match (spec.action, target_id, &slot.column) {
                (ToolAction::Update, Some(id), Some(col)) => scratch.row(table, id).and_then(|r| r.get(col)).cloned(),
                _ => None,
            };
            let v = choose_value(slot.value_kind, &slot.enum_values, current.as_ref(), rng);
            user_args[i].insert(slot.name.clone(), v);
        }
        let call = bind_call(spec, &user_args[i], &bindings);
        let result = apply_tool(&mut scratch, &call, graph).map_err(|e| EnvError::InvalidChain(e.to_string()))?;
        if !result.is_ok() {
            return Err(EnvError::InvalidChain(format!("step {i} ({}) returned {:?}", spec.id, result.status)));
        }
        record_binding(spec, &result, &mut bindings);
    }
    Ok((db, GroundedChain { chain: chain.clone(), user_args }))
}

/// Breadth-first growth from the seed chain.
///
/// A tool joins only when all of its producers are already included. Rows for
/// its user-provided entity slots are appended to `db`.
pub fn expand_chain(
    seed: &ToolChain,
    graph: &ToolGraph,
    db: &mut DatabaseState,
    prior: &BTreeSet<String>,
    budget: usize,
    rng: &mut impl Rng,
) -> EnvSubgraph {
    let mut included: BTreeSet<usize> = prior.iter().filter_map(|id| graph.index_of(id)).collect();
    let mut queue = VecDeque::new();
    for id in &seed.tools {
        if let Some(i) = graph.index_of(id) {
            included.insert(i);
            queue.push_back(i);
        }
    }
    let mut added = 0;
    'bfs: while let Some(u) = queue.pop_front() {
        for v in graph.neighbors(u) {
            if added >= budget {
                break 'bfs;
            }
            if included.contains(&v) {
                continue;
            }
            let Some(producers) = graph.producer_indices(v) else { continue };
            if producers.iter().all(|p| included.contains(p)) {
                included.insert(v);
                added += 1;
                add_rows_for(graph, v, db, rng);
                queue.push_back(v);
            }
        }
    }
    let ids = included.into_iter().map(|i| graph.tool_at(i).id.clone()).collect();
    EnvSubgraph::from_included(graph, ids, vec![seed.clone()])
}

fn add_rows_for(graph: &ToolGraph, i: usize, db: &mut DatabaseState, rng: &mut impl Rng) {
    let schema = graph.schema();
    for slot in &graph.tool_at(i).inputs {
        if slot.is_user_provided() && slot.value_kind == ValueKind::EntityId {
            if let Some(table) = slot.entity.as_deref().and_then(|k| schema.table_of(k)) {
                let row = synth_row(schema, table, db, rng);
                db.insert(table, row);
            }
        }
    }
}

/// c(E) = |V| + λ · 2|E_int| / (|V| (|V| − 1)).
pub fn complexity(sub: &EnvSubgraph, graph: &ToolGraph, lambda: f64) -> f64 {
    let n = sub.included.len() as f64;
    if n <= 1.0 {
        return n;
    }
    let e = graph.edges_within(&sub.included) as f64;
    n + lambda * 2.0 * e / (n * (n - 1.0))
}

/// Attempts a randomized solver needs to find a valid chain of `min_len` inside `remaining`.
///
/// Returns `attempt_cap + 1` when no attempt succeeds.
pub fn chain_discovery_difficulty(
    remaining: &BTreeSet<String>,
    graph: &ToolGraph,
    db: &DatabaseState,
    solver: &ScriptedSolver,
    attempt_cap: u32,
    min_len: usize,
    rng: &mut impl Rng,
) -> u32 {
    let pool: Vec<usize> = (0..graph.len()).filter(|&i| remaining.contains(&graph.tool_at(i).id)).collect();
    if pool.is_empty() || min_len == 0 {
        return attempt_cap + 1;
    }
    for attempt in 1..=attempt_cap {
        let mut tracker = ChainTracker::new(graph);
        let mut valid = true;
        while tracker.len() < min_len {
            let unused: Vec<usize> = pool.iter().copied().filter(|&i| !tracker.contains(i)).collect();
            if unused.is_empty() {
                valid = false;
                break;
            }
            let feasible: Vec<usize> = unused.iter().copied().filter(|&i| tracker.can_append(i)).collect();
            let pick = if !feasible.is_empty() && rng.random::<f64>() < solver.skill {
                feasible[rng.random_range(0..feasible.len())]
            } else {
                unused[rng.random_range(0..unused.len())]
            };
            if !tracker.can_append(pick) {
                valid = false;
                break;
            }
            tracker.append(pick);
        }
        if valid {
            let chain = to_chain(graph, tracker.indices());
            if instantiate_chain_db(&chain, graph, db, rng).is_ok() {
                return attempt;
            }
        }
    }
    attempt_cap + 1
}

/// p = clamp01(w1·exp(−c/c0) + w2/(1+g) + w3·min(d/d0, 1)); spawn iff p > τ.
pub fn spawn_decision(c: f64, g: u32, d: usize, weights: &SpawnWeights, tau: f64) -> Result<(f64, bool), EnvError> {
    check_weights(weights)?;
    if !(c >= 0.0) {
        return Err(EnvError::InvalidConfig("complexity must be nonnegative".into()));
    }
    let p = weights.w_complexity * (-c / weights.c0).exp()
        + weights.w_difficulty / (1.0 + f64::from(g))
        + weights.w_remaining * (d as f64 / weights.d0).min(1.0);
    let p = p.clamp(0.0, 1.0);
    Ok((p, p > tau))
}

fn indices_of(graph: &ToolGraph, ids: &BTreeSet<String>) -> Vec<usize> {
    (0..graph.len()).filter(|&i| ids.contains(&graph.tool_at(i).id)).collect()
}

fn bump_usage(usage: &mut UsageCounts, chain: &ToolChain) {
    for t in &chain.tools {
        *usage.entry(t.clone()).or_default() += 1;
    }
}

/// Grows an environment from seed chains until the spawn rule stops, then tops it up
/// to the minimum size with extra chains sampled from the whole graph.
pub fn assemble_environment(
    graph: &ToolGraph,
    config: &EnvConfig,
    rng: &mut impl Rng,
) -> Result<Environment, EnvError> {
    config.validate()?;
    if graph.len() < config.min_tools && config.strict_min_tools {
        return Err(EnvError::GraphTooSmall { size: graph.len(), required: config.min_tools });
    }
    let target = config.min_tools.min(graph.len());
    let solver = ScriptedSolver { skill: config.discovery_skill, ..ScriptedSolver::default() };
    let all: Vec<usize> = (0..graph.len()).collect();
    let mut usage = UsageCounts::new();
    let mut db = DatabaseState::empty(graph.schema());
    let mut included = BTreeSet::new();
    let mut gold: Vec<GroundedChain> = Vec::new();
    let mut prov = Vec::new();

    loop {
        let first = gold.is_empty();
        let pool = if first { all.clone() } else { indices_of(graph, &remaining_of(graph, &included)) };
        let chain = match sample_chain_in(graph, &pool, &usage, config.chain_len, true, rng) {
            Ok(c) => c,
            Err(e @ EnvError::NoFeasibleChain { .. }) if !first => {
                prov.push(format!("seed={} event=stop reason=\"{e}\"", gold.len() + 1));
                break;
            }
            Err(e) => return Err(e),
        };
        let (next_db, grounded) = instantiate_chain_db(&chain, graph, &db, rng)?;
        db = next_db;
        bump_usage(&mut usage, &chain);
        let sub = expand_chain(&chain, graph, &mut db, &included, config.expansion_budget, rng);
        included = sub.included.clone();
        gold.push(grounded);

        let c = complexity(&sub, graph, config.lambda);
        let g = chain_discovery_difficulty(
            &sub.remaining,
            graph,
            &db,
            &solver,
            config.attempt_cap,
            config.chain_len.0,
            rng,
        );
        let d = sub.remaining.len();
        let (p, spawn) = spawn_decision(c, g, d, &config.weights, config.tau)?;
        prov.push(format!(
            "seed={} event=seed chain=[{}] included={} c={c:.4} g={g} d={d} p={p:.4} spawn={spawn}",
            gold.len(),
            chain.tools.join(","),
            included.len()
        ));
        if !spawn {
            break;
        }
        if gold.len() >= config.max_seeds {
            prov.push(format!("seed={} event=stop reason=\"max_seeds reached\"", gold.len()));
            break;
        }
    }

    let mut stall = 0;
    while included.len() < target {
        let sampled = match sample_chain_in(graph, &all, &usage, config.chain_len, false, rng) {
            Ok(c) if c.tools.iter().any(|t| !included.contains(t)) => Some(c),
            Ok(c) => {
                bump_usage(&mut usage, &c);
                stall += 1;
                None
            }
            Err(_) => {
                stall += 1;
                None
            }
        };
        let chain = match sampled {
            Some(c) => c,
            None if stall < config.fallback_attempts => continue,
            None => match closure_chain(graph, &included, rng) {
                Some(c) => c,
                None => break,
            },
        };
        stall = 0;
        let (next_db, grounded) = instantiate_chain_db(&chain, graph, &db, rng)?;
        db = next_db;
        bump_usage(&mut usage, &chain);
        let sub = expand_chain(&chain, graph, &mut db, &included, config.expansion_budget, rng);
        included = sub.included;
        gold.push(grounded);
        prov.push(format!(
            "fallback={} event=fallback chain=[{}] included={}",
            gold.len(),
            chain.tools.join(","),
            included.len()
        ));
    }
    if included.len() < target {
        prov.push(format!("event=exhausted included={} target={target}", included.len()));
    }

    let seeds: Vec<ToolChain> = gold.iter().map(|g| g.chain.clone()).collect();
    let subgraph = EnvSubgraph::from_included(graph, included, seeds);
    let complexity = complexity(&subgraph, graph, config.lambda);
    prov.push(format!("event=done included={} gold_chains={} c={complexity:.4}", subgraph.included.len(), gold.len()));
    Ok(Environment {
        domain: graph.domain().to_string(),
        subgraph,
        db,
        gold_chains: gold,
        complexity,
        provenance: prov,
    })
}

/// Last-resort chain: an uncovered tool preceded by its producer closure in
/// dependency order. May be longer than the configured chain length.
fn closure_chain(graph: &ToolGraph, included: &BTreeSet<String>, rng: &mut impl Rng) -> Option<ToolChain> {
    let mut uncovered: Vec<usize> = (0..graph.len()).filter(|&i| !included.contains(&graph.tools()[i].id)).collect();
    while !uncovered.is_empty() {
        let target = uncovered.swap_remove(rng.random_range(0..uncovered.len()));
        let mut order = Vec::new();
        if !post_order(graph, target, &mut BTreeSet::new(), &mut order) {
            continue;
        }
        let chain = to_chain(graph, &order);
        if crate::chain::is_feasible(graph, &chain.tools) {
            return Some(chain);
        }
    }
    None
}

fn post_order(graph: &ToolGraph, i: usize, seen: &mut BTreeSet<usize>, out: &mut Vec<usize>) -> bool {
    if !seen.insert(i) {
        return true;
    }
    let Some(producers) = graph.producer_indices(i) else { return false };
    for p in producers {
        if !post_order(graph, p, seen, out) {
            return false;
        }
    }
    out.push(i);
    true
}

fn remaining_of(graph: &ToolGraph, included: &BTreeSet<String>) -> BTreeSet<String> {
    graph.tools().iter().map(|t| t.id.clone()).filter(|id| !included.contains(id)).collect()
}

#[cfg(test)]
pub(crate) mod testgraphs {
    //! Small hand-built graphs over the shop fixture schema.

    use crate::domain::{ParamSlot, SlotRole, SlotSource, ToolAction, ToolGraph, ToolSpec};
    use crate::exec::fixtures::{id_slot, qty_slot, schema, tool};

    fn by(t: &str) -> SlotSource {
        SlotSource::ProducedBy { tool: t.into() }
    }

    fn order_lookup(id: &str, from: Option<&str>) -> ToolSpec {
        let src = from.map(by).unwrap_or(SlotSource::UserProvided);
        tool(id, ToolAction::Lookup, "order", vec![id_slot("order", SlotRole::Target, src)])
    }

    /// a -> b -> c where a creates an order, b looks it up, c cancels what b found.
    pub fn path3() -> ToolGraph {
        let tools = vec![
            tool("a", ToolAction::Create, "order", vec![qty_slot()]),
            order_lookup("b", Some("a")),
            tool("c", ToolAction::Cancel, "order", vec![id_slot("order", SlotRole::Target, by("b"))]),
        ];
        ToolGraph::new("shop", schema(), tools)
    }

    /// Two interchangeable creators a, a2.
    pub fn twin_roots() -> ToolGraph {
        let tools = vec![
            tool("a", ToolAction::Create, "order", vec![qty_slot()]),
            tool("a2", ToolAction::Create, "order", vec![qty_slot()]),
        ];
        ToolGraph::new("shop", schema(), tools)
    }

    /// Ten tools mixing roots, fan-in and a chain of lookups.
    pub fn ten() -> ToolGraph {
        let two = |id: &str, a: &str, b: &str| {
            let mut s1 = id_slot("order", SlotRole::Target, by(a));
            s1.name = "order_id".into();
            let mut s2: ParamSlot = id_slot("order", SlotRole::Reference, by(b));
            s2.name = "other_order_id".into();
            s2.column = None;
            tool(id, ToolAction::Update, "order", vec![s1, s2, qty_slot()])
        };
        let tools = vec![
            tool("t0", ToolAction::Create, "order", vec![qty_slot()]),
            tool("t1", ToolAction::Create, "order", vec![qty_slot()]),
            order_lookup("t2", Some("t0")),
            order_lookup("t3", Some("t1")),
            two("t4", "t2", "t3"),
            order_lookup("t5", Some("t4")),
            tool("t6", ToolAction::Cancel, "order", vec![id_slot("order", SlotRole::Target, by("t5"))]),
            order_lookup("t7", None),
            tool("t8", ToolAction::Update, "order", vec![id_slot("order", SlotRole::Target, by("t7")), qty_slot()]),
            tool("t9", ToolAction::Delete, "order", vec![id_slot("order", SlotRole::Target, by("t8"))]),
        ];
        ToolGraph::new("shop", schema(), tools)
    }

    /// Eight order lookups; only `k0` takes a user-provided id, the rest depend on a missing-from-pool producer.
    pub fn one_in_eight() -> ToolGraph {
        let mut tools = vec![tool("root", ToolAction::Create, "order", vec![qty_slot()])];
        tools.push(order_lookup("k0", None));
        for k in 1..8 {
            tools.push(order_lookup(&format!("k{k}"), Some("root")));
        }
        ToolGraph::new("shop", schema(), tools)
    }
}
