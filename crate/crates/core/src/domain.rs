//! Domain definitions: tool templates, database schemas and the tool dependency graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, ToolCall, ToolStatus};
use crate::rng::seeded;
use crate::schema::{Column, ColumnType, DatabaseState, DomainSchema, EntityKind, Row, Value};
use crate::styles::{self, FieldShape};

/// Serialization format version for graph documents.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid domain config: {0}")]
    InvalidConfig(String),
    #[error("infeasible domain config: {0}")]
    InfeasibleConfig(String),
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    EntityId,
    Scalar,
    Enum,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotSource {
    UserProvided,
    ProducedBy { tool: String },
    Constant { value: Value },
}

/// What a slot does when the tool runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotRole {
    /// The row the tool reads or modifies.
    Target,
    /// A row that must exist; on create it also fills the foreign-key column.
    Reference,
    /// A value written into `column`.
    Field,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub value_kind: ValueKind,
    pub source: SlotSource,
    pub role: SlotRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub enum_values: Vec<String>,
}

impl ParamSlot {
    pub fn producer(&self) -> Option<&str> {
        match &self.source {
            SlotSource::ProducedBy { tool } => Some(tool),
            _ => None,
        }
    }

    pub fn is_user_provided(&self) -> bool {
        self.source == SlotSource::UserProvided
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolAction {
    Create,
    Lookup,
    Update,
    Cancel,
    Delete,
}

impl ToolAction {
    pub fn is_write(self) -> bool {
        !matches!(self, ToolAction::Lookup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Insert,
    Update,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableEffect {
    pub table: String,
    pub effect: EffectKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub id: String,
    pub domain: String,
    pub action: ToolAction,
    /// Entity kind the tool operates on.
    pub entity: String,
    pub inputs: Vec<ParamSlot>,
    pub reads: Vec<String>,
    pub writes: Vec<TableEffect>,
    pub output_entities: Vec<String>,
}

impl ToolSpec {
    pub fn slot(&self, name: &str) -> Option<&ParamSlot> {
        self.inputs.iter().find(|s| s.name == name)
    }

    pub fn target_slot(&self) -> Option<&ParamSlot> {
        self.inputs.iter().find(|s| s.role == SlotRole::Target)
    }

    /// Distinct producer tool ids, in slot order.
    pub fn producers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in self.inputs.iter().filter_map(ParamSlot::producer) {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    pub fn is_read_only(&self) -> bool {
        self.writes.is_empty()
    }
}

/// The domain graph: tools in a topological order plus producer/consumer edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraphDocument", try_from = "GraphDocument")]
pub struct ToolGraph {
    domain: String,
    schema: DomainSchema,
    tools: Vec<ToolSpec>,
    edges: BTreeSet<(String, String)>,
    index: HashMap<String, usize>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphDocument {
    schema_version: u32,
    domain: String,
    schema: DomainSchema,
    tools: Vec<ToolSpec>,
    edges: Vec<(String, String)>,
}

impl From<ToolGraph> for GraphDocument {
    fn from(g: ToolGraph) -> Self {
        GraphDocument {
            schema_version: SCHEMA_VERSION,
            domain: g.domain,
            schema: g.schema,
            tools: g.tools,
            edges: g.edges.into_iter().collect(),
        }
    }
}

impl TryFrom<GraphDocument> for ToolGraph {
    type Error = DomainError;

    fn try_from(doc: GraphDocument) -> Result<Self, Self::Error> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(DomainError::Malformed(format!("unsupported schema_version {}", doc.schema_version)));
        }
        Ok(ToolGraph::from_parts(doc.domain, doc.schema, doc.tools, doc.edges.into_iter().collect()))
    }
}

impl ToolGraph {
    /// Builds a graph whose edges are derived from the tools' produced-by slots.
    pub fn new(domain: impl Into<String>, schema: DomainSchema, tools: Vec<ToolSpec>) -> Self {
        let mut edges = BTreeSet::new();
        for t in &tools {
            for p in t.producers() {
                edges.insert((p.to_string(), t.id.clone()));
            }
        }
        Self::from_parts(domain.into(), schema, tools, edges)
    }

    /// Builds a graph from explicit parts without reconciling edges and slots.
    pub fn from_parts(
        domain: String,
        schema: DomainSchema,
        tools: Vec<ToolSpec>,
        edges: BTreeSet<(String, String)>,
    ) -> Self {
        let index: HashMap<String, usize> = tools.iter().enumerate().map(|(i, t)| (t.id.clone(), i)).collect();
        let mut succ = vec![Vec::new(); tools.len()];
        let mut pred = vec![Vec::new(); tools.len()];
        for (a, b) in &edges {
            if let (Some(&ia), Some(&ib)) = (index.get(a), index.get(b)) {
                succ[ia].push(ib);
                pred[ib].push(ia);
            }
        }
        for list in succ.iter_mut().chain(pred.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        Self { domain, schema, tools, edges, index, succ, pred }
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn schema(&self) -> &DomainSchema {
        &self.schema
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn tool(&self, id: &str) -> Option<&ToolSpec> {
        self.index_of(id).map(|i| &self.tools[i])
    }

    pub fn tool_at(&self, i: usize) -> &ToolSpec {
        &self.tools[i]
    }

    pub fn successors(&self, i: usize) -> &[usize] {
        &self.succ[i]
    }

    pub fn predecessors(&self, i: usize) -> &[usize] {
        &self.pred[i]
    }

    /// Undirected neighbours in index order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.succ[i].iter().chain(&self.pred[i]).copied().collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Indices of the tools whose outputs feed tool `i`. `None` if a producer is unknown.
    pub fn producer_indices(&self, i: usize) -> Option<Vec<usize>> {
        self.tools[i].producers().into_iter().map(|p| self.index_of(p)).collect()
    }

    /// 2E / (n (n - 1)); zero for fewer than two nodes.
    pub fn density(&self) -> f64 {
        let n = self.tools.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        2.0 * self.edges.len() as f64 / (n * (n - 1.0))
    }

    /// Edges with both endpoints in `set`.
    pub fn edges_within(&self, set: &BTreeSet<String>) -> usize {
        self.edges.iter().filter(|(a, b)| set.contains(a) && set.contains(b)).count()
    }

    pub fn is_dag(&self) -> bool {
        let n = self.tools.len();
        let mut indeg: Vec<usize> = self.pred.iter().map(Vec::len).collect();
        let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(u) = stack.pop() {
            seen += 1;
            for &v in &self.succ[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    stack.push(v);
                }
            }
        }
        seen == n
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        serde_json::from_str(text).map_err(|e| DomainError::Malformed(e.to_string()))
    }
}

/// Knobs for [`generate_domain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainGenConfig {
    /// Selects the domain vocabulary; values wrap around the style table.
    pub style: u32,
    pub tools: usize,
    /// Target edge density 2E / (n (n - 1)).
    pub density: f64,
    pub tables: usize,
    /// Inclusive range of extra existence-check reference slots per tool.
    pub aux_refs: (usize, usize),
    /// Lifts the minimum tool count so tiny graphs can be generated for tests.
    pub test_mode: bool,
}

impl Default for DomainGenConfig {
    fn default() -> Self {
        Self { style: 0, tools: 64, density: 0.08, tables: 8, aux_refs: (1, 3), test_mode: false }
    }
}

pub const MIN_FULL_DOMAIN_TOOLS: usize = 60;
const DENSITY_ACCEPT: f64 = 0.10;
const DENSITY_FALLBACK: f64 = 0.20;
const SOURCING_ATTEMPTS: usize = 200;

impl DomainGenConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |m: String| Err(DomainError::InvalidConfig(m));
        if !self.test_mode && self.tools < MIN_FULL_DOMAIN_TOOLS {
            return bad(format!("tools must be at least {MIN_FULL_DOMAIN_TOOLS}, got {}", self.tools));
        }
        if self.tools == 0 {
            return bad("tools must be positive".into());
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            return bad(format!("density must lie in (0, 1), got {}", self.density));
        }
        if self.tables < 4 {
            return bad(format!("tables must be at least 4, got {}", self.tables));
        }
        if self.aux_refs.0 > self.aux_refs.1 {
            return bad("aux_refs lower bound exceeds upper bound".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Template {
    Create,
    Lookup(Option<&'static str>),
    UpdateField(usize),
    SetStatus(&'static str, &'static str),
    Cancel,
    Delete,
}

struct KindPlan {
    name: String,
    table: String,
    parents: Vec<usize>,
    fields: Vec<(String, ColumnType)>,
}

impl KindPlan {
    fn templates(&self) -> Vec<Template> {
        let mut t = vec![Template::Create, Template::Lookup(None), Template::UpdateField(0), Template::Cancel];
        t.push(Template::SetStatus("confirm", "confirmed"));
        if self.fields.len() > 1 {
            t.push(Template::UpdateField(1));
        }
        t.push(Template::Delete);
        t.push(Template::SetStatus("hold", "on_hold"));
        for f in 2..self.fields.len() {
            t.push(Template::UpdateField(f));
        }
        t.push(Template::SetStatus("reactivate", "active"));
        t.extend(styles::LOOKUP_VERBS.iter().map(|v| Template::Lookup(Some(v))));
        t
    }
}

fn field_column(shape: &FieldShape) -> ColumnType {
    match shape {
        FieldShape::Int => ColumnType::Int,
        FieldShape::Text => ColumnType::Text,
        FieldShape::Enum(values) => ColumnType::Enum { values: values.iter().map(|s| s.to_string()).collect() },
    }
}

fn value_kind_of(ty: &ColumnType) -> ValueKind {
    match ty {
        ColumnType::Id | ColumnType::Ref { .. } => ValueKind::EntityId,
        ColumnType::Int => ValueKind::Scalar,
        ColumnType::Enum { .. } => ValueKind::Enum,
        ColumnType::Text => ValueKind::Text,
    }
}

fn entity_slot(kind: &str, role: SlotRole, column: Option<String>) -> ParamSlot {
    ParamSlot {
        name: format!("{kind}_id"),
        value_kind: ValueKind::EntityId,
        source: SlotSource::UserProvided,
        role,
        entity: Some(kind.to_string()),
        column,
        enum_values: Vec::new(),
    }
}

fn field_slot(column: &str, ty: &ColumnType, source: SlotSource) -> ParamSlot {
    ParamSlot {
        name: column.to_string(),
        value_kind: value_kind_of(ty),
        source,
        role: SlotRole::Field,
        entity: None,
        column: Some(column.to_string()),
        enum_values: match ty {
            ColumnType::Enum { values } => values.clone(),
            _ => Vec::new(),
        },
    }
}

fn kind_names(style: &styles::DomainStyle, count: usize) -> Vec<String> {
    (0..count)
        .map(|i| {
            let base = style.kinds[i % style.kinds.len()];
            match i / style.kinds.len() {
                0 => base.to_string(),
                round => format!("{base}_{}", round + 1),
            }
        })
        .collect()
}

fn status_column() -> ColumnType {
    ColumnType::Enum { values: styles::STATUSES.iter().map(|s| s.to_string()).collect() }
}

/// Generates a domain schema and its tool dependency graph.
pub fn generate_domain(seed: u64, config: &DomainGenConfig) -> Result<(DomainSchema, ToolGraph), DomainError> {
    config.validate()?;
    let mut rng = seeded(seed);
    let style = styles::style(config.style);
    let domain = style.name.to_string();

    let kinds: Vec<KindPlan> = kind_names(style, config.tables)
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let n_fields = rng.random_range(2..=4);
            let mut pool: Vec<usize> = (0..styles::FIELDS.len()).collect();
            pool.shuffle(&mut rng);
            let mut picked: Vec<usize> = pool[..n_fields].to_vec();
            picked.sort_unstable();
            let fields = picked
                .into_iter()
                .map(|f| {
                    let (fname, shape) = &styles::FIELDS[f];
                    (fname.to_string(), field_column(shape))
                })
                .collect();
            let n_parents = rng.random_range(0..=i.min(2));
            let mut earlier: Vec<usize> = (0..i).collect();
            earlier.shuffle(&mut rng);
            let mut parents = earlier[..n_parents].to_vec();
            parents.sort_unstable();
            let table = styles::table_name(&name);
            KindPlan { name, table, parents, fields }
        })
        .collect();

    let mut tables = BTreeMap::new();
    for k in &kinds {
        let mut cols = vec![Column::new("id", ColumnType::Id), Column::new("status", status_column())];
        for &p in &k.parents {
            cols.push(Column::new(format!("{}_id", kinds[p].name), ColumnType::Ref { entity: kinds[p].name.clone() }));
        }
        for (name, ty) in &k.fields {
            cols.push(Column::new(name.clone(), ty.clone()));
        }
        tables.insert(k.table.clone(), cols);
    }
    let schema = DomainSchema {
        domain: domain.clone(),
        tables,
        entity_kinds: kinds.iter().map(|k| EntityKind { name: k.name.clone(), table: k.table.clone() }).collect(),
    };

    // Round-robin over kinds so every kind gets its core templates first.
    let per_kind: Vec<Vec<Template>> = kinds.iter().map(KindPlan::templates).collect();
    let capacity: usize = per_kind.iter().map(Vec::len).sum();
    if config.tools > capacity {
        return Err(DomainError::InvalidConfig(format!(
            "{} tools requested but {} tables support at most {capacity}",
            config.tools, config.tables
        )));
    }
    let mut chosen: Vec<(usize, Template)> = Vec::with_capacity(config.tools);
    'fill: for rank in 0.. {
        for (k, temps) in per_kind.iter().enumerate() {
            if let Some(t) = temps.get(rank) {
                chosen.push((k, t.clone()));
                if chosen.len() == config.tools {
                    break 'fill;
                }
            }
        }
    }

    let mut tools: Vec<ToolSpec> =
        chosen.into_iter().map(|(k, t)| build_tool(&domain, &kinds, k, &t, config.aux_refs, &mut rng)).collect();
    tools.shuffle(&mut rng);

    assign_sources(&mut tools, config.density, &mut rng)?;
    let graph = ToolGraph::new(domain, schema.clone(), tools);
    Ok((schema, graph))
}

fn build_tool(
    domain: &str,
    kinds: &[KindPlan],
    k: usize,
    template: &Template,
    aux: (usize, usize),
    rng: &mut impl Rng,
) -> ToolSpec {
    let kind = &kinds[k];
    let name = &kind.name;
    let table = kind.table.clone();
    let mut inputs = Vec::new();
    let (id, action) = match template {
        Template::Create => {
            for &p in &kind.parents {
                let pk = &kinds[p].name;
                inputs.push(entity_slot(pk, SlotRole::Reference, Some(format!("{pk}_id"))));
            }
            for (f, ty) in &kind.fields {
                inputs.push(field_slot(f, ty, SlotSource::UserProvided));
            }
            (format!("create_{name}"), ToolAction::Create)
        }
        Template::Lookup(verb) => {
            inputs.push(entity_slot(name, SlotRole::Target, None));
            (format!("{}_{name}", verb.unwrap_or("get")), ToolAction::Lookup)
        }
        Template::UpdateField(f) => {
            let (fname, ty) = &kind.fields[*f];
            inputs.push(entity_slot(name, SlotRole::Target, None));
            inputs.push(field_slot(fname, ty, SlotSource::UserProvided));
            (format!("update_{name}_{fname}"), ToolAction::Update)
        }
        Template::SetStatus(verb, status) => {
            inputs.push(entity_slot(name, SlotRole::Target, None));
            inputs.push(field_slot("status", &status_column(), SlotSource::Constant { value: Value::text(*status) }));
            (format!("{verb}_{name}"), ToolAction::Update)
        }
        Template::Cancel => {
            inputs.push(entity_slot(name, SlotRole::Target, None));
            (format!("cancel_{name}"), ToolAction::Cancel)
        }
        Template::Delete => {
            inputs.push(entity_slot(name, SlotRole::Target, None));
            (format!("delete_{name}"), ToolAction::Delete)
        }
    };

    // Existence-check references to other kinds.
    let taken: BTreeSet<usize> = std::iter::once(k)
        .chain(if matches!(template, Template::Create) { kind.parents.clone() } else { Vec::new() })
        .collect();
    let mut pool: Vec<usize> = (0..kinds.len()).filter(|i| !taken.contains(i)).collect();
    pool.shuffle(rng);
    let n_aux = rng.random_range(aux.0..=aux.1).min(pool.len());
    let mut aux_kinds = pool[..n_aux].to_vec();
    aux_kinds.sort_unstable();
    for a in aux_kinds {
        inputs.push(entity_slot(&kinds[a].name, SlotRole::Reference, None));
    }

    let mut reads: Vec<String> = inputs
        .iter()
        .filter_map(|s| s.entity.as_ref())
        .map(|e| kinds.iter().find(|k| &k.name == e).expect("known kind").table.clone())
        .collect();
    reads.sort();
    reads.dedup();
    let writes = match action {
        ToolAction::Create => vec![TableEffect { table, effect: EffectKind::Insert }],
        ToolAction::Lookup => Vec::new(),
        ToolAction::Update | ToolAction::Cancel => vec![TableEffect { table, effect: EffectKind::Update }],
        ToolAction::Delete => vec![TableEffect { table, effect: EffectKind::Delete }],
    };
    let output_entities = match action {
        ToolAction::Cancel | ToolAction::Delete => Vec::new(),
        _ => vec![name.clone()],
    };
    ToolSpec { id, domain: domain.to_string(), action, entity: name.clone(), inputs, reads, writes, output_entities }
}

/// Chooses produced-by sources for entity slots so the edge density lands near `target`.
///
/// Tools are already in their final order; a slot may only be sourced from an
/// earlier tool that outputs the slot's entity kind, which keeps the graph acyclic.
/// Each tool draws its own sourcing propensity so some tools stay dependency-free.
fn assign_sources(tools: &mut [ToolSpec], target: f64, rng: &mut impl Rng) -> Result<(), DomainError> {
    let n = tools.len();
    let pairs = if n < 2 { 0.0 } else { (n * (n - 1)) as f64 / 2.0 };
    let target_edges = target * pairs;

    // Earlier producers per (position, slot).
    let mut eligible: Vec<Vec<Vec<usize>>> = Vec::with_capacity(n);
    for (pos, tool) in tools.iter().enumerate() {
        let per_slot = tool
            .inputs
            .iter()
            .map(|s| match (&s.value_kind, &s.entity) {
                (ValueKind::EntityId, Some(kind)) => {
                    (0..pos).filter(|&p| tools[p].output_entities.contains(kind)).collect()
                }
                _ => Vec::new(),
            })
            .collect();
        eligible.push(per_slot);
    }
    let max_edges: f64 = eligible
        .iter()
        .map(|slots| {
            let union: BTreeSet<usize> = slots.iter().flatten().copied().collect();
            let usable = slots.iter().filter(|e| !e.is_empty()).count();
            usable.min(union.len()) as f64
        })
        .sum();
    if pairs == 0.0 || max_edges < (1.0 - DENSITY_FALLBACK) * target_edges {
        return Err(DomainError::InfeasibleConfig(format!(
            "density {target} needs about {target_edges:.0} edges but at most {max_edges:.0} are possible"
        )));
    }

    let mut scale = (target_edges / max_edges).min(1.0);
    let mut best: Option<(f64, Vec<Vec<Option<usize>>>)> = None;
    for _ in 0..SOURCING_ATTEMPTS {
        let mut choice: Vec<Vec<Option<usize>>> = Vec::with_capacity(n);
        let mut edges = 0usize;
        for slots in &eligible {
            let propensity = (2.0 * scale * rng.random::<f64>()).min(1.0);
            let mut used = BTreeSet::new();
            let mut picks = Vec::with_capacity(slots.len());
            for options in slots {
                let free: Vec<usize> = options.iter().copied().filter(|p| !used.contains(p)).collect();
                let pick = if !free.is_empty() && rng.random::<f64>() < propensity {
                    let p = free[rng.random_range(0..free.len())];
                    used.insert(p);
                    edges += 1;
                    Some(p)
                } else {
                    None
                };
                picks.push(pick);
            }
            choice.push(picks);
        }
        let err = (edges as f64 - target_edges).abs() / target_edges;
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, choice));
        }
        if err <= DENSITY_ACCEPT {
            break;
        }
        scale = if edges == 0 { scale * 2.0 } else { scale * target_edges / edges as f64 }.clamp(1e-4, 1e4);
    }
    let (err, choice) = best.expect("at least one attempt");
    if err > DENSITY_FALLBACK {
        return Err(DomainError::InfeasibleConfig(format!(
            "could not reach density {target} within 20% (best relative error {err:.3})"
        )));
    }
    let ids: Vec<String> = tools.iter().map(|t| t.id.clone()).collect();
    for (tool, picks) in tools.iter_mut().zip(choice) {
        for (slot, pick) in tool.inputs.iter_mut().zip(picks) {
            if let Some(p) = pick {
                slot.source = SlotSource::ProducedBy { tool: ids[p].clone() };
            }
        }
    }
    Ok(())
}

/// Per-tool outcome of [`validate_toolset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCheck {
    pub tool: String,
    pub executable: bool,
    pub edges_consistent: bool,
    pub issues: Vec<String>,
}

impl ToolCheck {
    pub fn passed(&self) -> bool {
        self.executable && self.edges_consistent
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub domain: String,
    pub passed: bool,
    pub graph_issues: Vec<String>,
    pub entries: Vec<ToolCheck>,
}

impl ValidationReport {
    pub fn pass_rate(&self) -> f64 {
        if self.entries.is_empty() {
            return 1.0;
        }
        self.entries.iter().filter(|e| e.passed()).count() as f64 / self.entries.len() as f64
    }

    pub fn failing(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| !e.passed()).map(|e| e.tool.as_str()).collect()
    }
}

/// Checks every tool for executability against a minimal database and for edge consistency.
pub fn validate_toolset(graph: &ToolGraph) -> ValidationReport {
    let mut graph_issues = Vec::new();
    if let Err(e) = graph.schema().check() {
        graph_issues.push(e);
    }
    if !graph.is_dag() {
        graph_issues.push("dependency graph has a cycle".into());
    }
    if graph.index.len() != graph.tools.len() {
        graph_issues.push("duplicate tool ids".into());
    }
    for (a, b) in graph.edges() {
        if graph.tool(a).is_none() || graph.tool(b).is_none() {
            graph_issues.push(format!("edge {a} -> {b} references an unknown tool"));
        }
    }

    let entries: Vec<ToolCheck> = graph
        .tools()
        .iter()
        .enumerate()
        .map(|(i, tool)| {
            let mut issues = Vec::new();
            let edges_consistent = check_edges(graph, i, &mut issues);
            let executable = check_executable(graph, tool, &mut issues);
            ToolCheck { tool: tool.id.clone(), executable, edges_consistent, issues }
        })
        .collect();
    let passed = graph_issues.is_empty() && entries.iter().all(ToolCheck::passed);
    ValidationReport { domain: graph.domain().to_string(), passed, graph_issues, entries }
}

fn check_edges(graph: &ToolGraph, i: usize, issues: &mut Vec<String>) -> bool {
    let tool = graph.tool_at(i);
    let before = issues.len();
    for slot in &tool.inputs {
        if slot.value_kind == ValueKind::Enum && slot.enum_values.is_empty() {
            issues.push(format!("slot {} has an empty enum domain", slot.name));
        }
        let Some(p) = slot.producer() else { continue };
        match graph.index_of(p) {
            None => issues.push(format!("slot {} references missing producer {p}", slot.name)),
            Some(pi) => {
                if pi >= i {
                    issues.push(format!("producer {p} is not ordered before {}", tool.id));
                }
                let kind = slot.entity.as_deref().unwrap_or_default();
                if !graph.tool_at(pi).output_entities.iter().any(|e| e == kind) {
                    issues.push(format!("producer {p} does not output {kind}"));
                }
                if !graph.edges().contains(&(p.to_string(), tool.id.clone())) {
                    issues.push(format!("edge {p} -> {} missing", tool.id));
                }
            }
        }
    }
    for (a, b) in graph.edges() {
        if b == &tool.id && !tool.producers().contains(&a.as_str()) {
            issues.push(format!("edge {a} -> {b} has no produced-by slot"));
        }
    }
    let tables = &graph.schema().tables;
    for t in tool.reads.iter().chain(tool.writes.iter().map(|w| &w.table)) {
        if !tables.contains_key(t) {
            issues.push(format!("table {t} not in schema"));
        }
    }
    if !tool.output_entities.is_empty() && tool.reads.is_empty() && tool.writes.is_empty() {
        issues.push("outputs entities without touching any table".into());
    }
    issues.len() == before
}

fn check_executable(graph: &ToolGraph, tool: &ToolSpec, issues: &mut Vec<String>) -> bool {
    let schema = graph.schema();
    let mut db = DatabaseState::empty(schema);
    let mut args = BTreeMap::new();
    for slot in &tool.inputs {
        match (&slot.value_kind, &slot.source) {
            (_, SlotSource::Constant { .. }) => {}
            (ValueKind::EntityId, _) => {
                let Some(table) = slot.entity.as_deref().and_then(|k| schema.table_of(k)) else {
                    issues.push(format!("slot {} has no entity table", slot.name));
                    return false;
                };
                let id = db.insert(table, probe_row(schema, table));
                args.insert(slot.name.clone(), Value::Int(id));
            }
            (ValueKind::Scalar, _) => {
                args.insert(slot.name.clone(), Value::Int(2));
            }
            (ValueKind::Text, _) => {
                args.insert(slot.name.clone(), Value::text("probe"));
            }
            (ValueKind::Enum, _) => match slot.enum_values.last() {
                Some(v) => {
                    args.insert(slot.name.clone(), Value::text(v.clone()));
                }
                None => return false,
            },
        }
    }
    match exec::apply_tool(&mut db, &ToolCall { tool: tool.id.clone(), args }, graph) {
        Ok(r) if r.status == ToolStatus::Ok => true,
        Ok(r) => {
            issues.push(format!("probe execution returned {:?}", r.status));
            false
        }
        Err(e) => {
            issues.push(e.to_string());
            false
        }
    }
}

/// A schema-conforming row with neutral values and null references.
pub(crate) fn probe_row(schema: &DomainSchema, table: &str) -> Row {
    let mut row = Row::new();
    for col in schema.columns(table).unwrap_or_default() {
        let v = match &col.ty {
            ColumnType::Id => continue,
            ColumnType::Ref { .. } => Value::Null,
            ColumnType::Int => Value::Int(1),
            ColumnType::Text => Value::text("sample"),
            ColumnType::Enum { values } if col.name == "status" => {
                Value::text(values.iter().find(|v| *v == styles::STATUS_ACTIVE).unwrap_or(&values[0]).clone())
            }
            ColumnType::Enum { values } => Value::text(values[0].clone()),
        };
        row.insert(col.name.clone(), v);
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full() -> DomainGenConfig {
        DomainGenConfig::default()
    }

    #[test]
    fn full_domain_meets_size_and_density() {
        let (_, g) = generate_domain(1, &full()).unwrap();
        assert_eq!(g.len(), 64);
        assert!(g.is_dag());
        let d = g.density();
        assert!((d - 0.08).abs() <= 0.2 * 0.08, "density {d}");
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let a = generate_domain(1, &full()).unwrap().1.to_json();
        let b = generate_domain(1, &full()).unwrap().1.to_json();
        assert_eq!(a, b);
        let c = generate_domain(2, &full()).unwrap().1.to_json();
        assert_ne!(a, c);
    }

    #[test]
    fn round_trip_is_lossless() {
        let (_, g) = generate_domain(5, &full()).unwrap();
        let text = g.to_json();
        assert!(text.contains("\"schema_version\": 1"));
        let back = ToolGraph::from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn rejects_bad_configs() {
        let small = DomainGenConfig { tools: 30, ..full() };
        assert!(matches!(generate_domain(1, &small), Err(DomainError::InvalidConfig(_))));
        let dens = DomainGenConfig { density: 1.0, ..full() };
        assert!(matches!(generate_domain(1, &dens), Err(DomainError::InvalidConfig(_))));
        let tables = DomainGenConfig { tables: 3, ..full() };
        assert!(matches!(generate_domain(1, &tables), Err(DomainError::InvalidConfig(_))));
    }

    #[test]
    fn unreachable_density_is_infeasible() {
        let dense = DomainGenConfig { density: 0.9, ..full() };
        assert!(matches!(generate_domain(1, &dense), Err(DomainError::InfeasibleConfig(_))));
    }

    #[test]
    fn twenty_styles_give_twenty_domains() {
        let names: BTreeSet<String> = (0..20)
            .map(|s| generate_domain(3, &DomainGenConfig { style: s, ..full() }).unwrap().1.domain().to_string())
            .collect();
        assert_eq!(names.len(), 20);
    }

    #[test]
    fn generated_domains_validate() {
        for seed in 0..20 {
            let (_, g) = generate_domain(seed, &DomainGenConfig { style: seed as u32, ..full() }).unwrap();
            let r = validate_toolset(&g);
            assert!(r.passed, "seed {seed}: {:?}", r.failing());
            assert_eq!(r.pass_rate(), 1.0);
        }
    }

    #[test]
    fn broken_edge_flags_only_that_tool() {
        let (schema, g) = generate_domain(4, &full()).unwrap();
        let mut tools = g.tools().to_vec();
        let victim = tools.iter().position(|t| t.inputs.iter().any(|s| s.value_kind == ValueKind::EntityId)).unwrap();
        let slot = tools[victim].inputs.iter_mut().find(|s| s.value_kind == ValueKind::EntityId).unwrap();
        slot.source = SlotSource::ProducedBy { tool: "ghost_tool".into() };
        let broken = ToolGraph::from_parts(g.domain().into(), schema, tools.clone(), g.edges().clone());
        let r = validate_toolset(&broken);
        assert!(!r.passed);
        assert_eq!(r.failing(), vec![tools[victim].id.as_str()]);
    }

    #[test]
    fn empty_graph_passes_vacuously() {
        let schema = DomainSchema { domain: "none".into(), tables: BTreeMap::new(), entity_kinds: vec![] };
        let r = validate_toolset(&ToolGraph::new("none", schema, vec![]));
        assert!(r.passed);
        assert!(r.entries.is_empty());
    }

    #[test]
    fn validation_is_idempotent() {
        let (_, g) = generate_domain(9, &full()).unwrap();
        assert_eq!(validate_toolset(&g), validate_toolset(&g));
    }

    #[test]
    fn tool_invariants_hold() {
        let (schema, g) = generate_domain(11, &full()).unwrap();
        for t in g.tools() {
            for table in t.reads.iter().chain(t.writes.iter().map(|w| &w.table)) {
                assert!(schema.tables.contains_key(table));
            }
            if !t.output_entities.is_empty() {
                assert!(!t.reads.is_empty() || !t.writes.is_empty());
            }
        }
        for (a, b) in g.edges() {
            assert!(g.tool(b).unwrap().producers().contains(&a.as_str()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn any_seed_yields_valid_dag(seed in any::<u64>(), style in 0u32..24, density in 0.04f64..0.1) {
            let cfg = DomainGenConfig { style, density, ..DomainGenConfig::default() };
            // Near the top of the range the edge capacity depends on the seed; the
            // generator must refuse rather than under-deliver there.
            let (_, g) = match generate_domain(seed, &cfg) {
                Err(DomainError::InfeasibleConfig(_)) if density > 0.07 => return Ok(()),
                r => r.unwrap(),
            };
            prop_assert!(g.is_dag());
            for t in g.tools() {
                for p in t.producers() {
                    prop_assert!(g.tool(p).is_some());
                }
            }
            prop_assert!((g.density() - density).abs() <= 0.2 * density);
        }
    }
}
