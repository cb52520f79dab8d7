//! Interprets tool calls against the database model.
//!
//! Evaluation is split from commitment so the noise layer can drop a result
//! (transient failure) without the call ever touching the database.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EffectKind, ParamSlot, SlotRole, SlotSource, ToolAction, ToolGraph, ValueKind};
use crate::noise::NoiseKind;
use crate::schema::{ColumnType, DatabaseState, EntityId, Row, Value};
use crate::styles;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("unknown tool {0}")]
    UnknownTool(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub args: BTreeMap<String, Value>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>) -> Self {
        Self { tool: tool.into(), args: BTreeMap::new() }
    }

    pub fn arg(mut self, name: &str, value: Value) -> Self {
        self.args.insert(name.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    MissingArg,
    MissingEntity,
    PreconditionFailed,
    /// Produced only by the noise layer; the call had no effect and may be retried.
    TransientFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadEntity {
    pub kind: String,
    pub id: EntityId,
    pub fields: Row,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AppliedEffect {
    pub table: String,
    pub effect: EffectKind,
    pub id: EntityId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub status: ToolStatus,
    pub payload: Vec<PayloadEntity>,
    pub effects: Vec<AppliedEffect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseKind>,
    /// Extra simulated latency in seconds added by the noise layer.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub extra_latency: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl ToolResult {
    fn failed(status: ToolStatus, detail: String) -> Self {
        Self { status, payload: Vec::new(), effects: Vec::new(), detail: Some(detail), noise: None, extra_latency: 0.0 }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }

    /// Id of the first payload entity of `kind`.
    pub fn entity_id(&self, kind: &str) -> Option<EntityId> {
        self.payload.iter().find(|p| p.kind == kind).map(|p| p.id)
    }

    /// Number of payload fields, used for token accounting.
    pub fn field_count(&self) -> usize {
        self.payload.iter().map(|p| p.fields.len()).sum()
    }
}

/// A pending database change produced by a successful evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    Insert { table: String, id: EntityId, row: Row },
    Set { table: String, id: EntityId, changes: Vec<(String, Value)> },
    Delete { table: String, id: EntityId },
}

pub fn commit(db: &mut DatabaseState, mutation: Mutation) {
    match mutation {
        Mutation::Insert { table, id, row } => {
            db.tables.entry(table).or_default().insert(id, row);
        }
        Mutation::Set { table, id, changes } => {
            if let Some(row) = db.row_mut(&table, id) {
                for (col, v) in changes {
                    row.insert(col, v);
                }
            }
        }
        Mutation::Delete { table, id } => {
            if let Some(rows) = db.tables.get_mut(&table) {
                rows.remove(&id);
            }
        }
    }
}

/// Computes the result of `call` without modifying `db`.
pub fn evaluate(
    db: &DatabaseState,
    call: &ToolCall,
    graph: &ToolGraph,
) -> Result<(ToolResult, Option<Mutation>), ExecError> {
    let spec = graph.tool(&call.tool).ok_or_else(|| ExecError::UnknownTool(call.tool.clone()))?;
    let schema = graph.schema();

    let mut values: Vec<(&ParamSlot, Value)> = Vec::with_capacity(spec.inputs.len());
    for slot in &spec.inputs {
        let v = match &slot.source {
            SlotSource::Constant { value } => value.clone(),
            _ => match call.args.get(&slot.name) {
                Some(v) => v.clone(),
                None => {
                    return Ok((
                        ToolResult::failed(ToolStatus::MissingArg, format!("missing argument {}", slot.name)),
                        None,
                    ))
                }
            },
        };
        values.push((slot, v));
    }

    for (slot, v) in &values {
        let ok = match slot.value_kind {
            ValueKind::EntityId => matches!(v, Value::Int(i) if *i > 0),
            ValueKind::Scalar => matches!(v, Value::Int(_)),
            ValueKind::Enum => matches!(v, Value::Text(s) if slot.enum_values.contains(s)),
            ValueKind::Text => matches!(v, Value::Text(_)),
        };
        if !ok {
            return Ok((
                ToolResult::failed(ToolStatus::PreconditionFailed, format!("invalid value {v} for {}", slot.name)),
                None,
            ));
        }
    }

    let mut target: Option<(String, EntityId)> = None;
    for (slot, v) in &values {
        if slot.value_kind != ValueKind::EntityId {
            continue;
        }
        let kind = slot.entity.as_deref().unwrap_or_default();
        let Some(table) = schema.table_of(kind) else {
            return Ok((ToolResult::failed(ToolStatus::MissingEntity, format!("unknown entity kind {kind}")), None));
        };
        let id = v.as_int().expect("checked above");
        if db.row(table, id).is_none() {
            return Ok((ToolResult::failed(ToolStatus::MissingEntity, format!("{kind} {id} not found")), None));
        }
        if slot.role == SlotRole::Target {
            target = Some((table.to_string(), id));
        }
    }

    let table = schema
        .table_of(&spec.entity)
        .ok_or_else(|| ExecError::UnknownTool(format!("{} (entity {} has no table)", spec.id, spec.entity)))?
        .to_string();
    let cancelled = Value::text(styles::STATUS_CANCELLED);

    let field_values = || {
        values
            .iter()
            .filter(|(s, _)| s.role == SlotRole::Field)
            .filter_map(|(s, v)| s.column.clone().map(|c| (c, v.clone())))
            .collect::<Vec<_>>()
    };

    let ok = |payload: Vec<PayloadEntity>, effect: Option<(EffectKind, EntityId)>| ToolResult {
        status: ToolStatus::Ok,
        payload,
        effects: effect
            .map(|(effect, id)| vec![AppliedEffect { table: table.clone(), effect, id }])
            .unwrap_or_default(),
        detail: None,
        noise: None,
        extra_latency: 0.0,
    };

    match spec.action {
        ToolAction::Create => {
            let mut row = Row::new();
            for col in schema.columns(&table).unwrap_or_default() {
                let v = match &col.ty {
                    ColumnType::Id => continue,
                    _ if col.name == "status" => Value::text(styles::STATUS_CREATED),
                    ColumnType::Ref { .. } => values
                        .iter()
                        .find(|(s, _)| s.role == SlotRole::Reference && s.column.as_deref() == Some(&col.name))
                        .map(|(_, v)| v.clone())
                        .unwrap_or(Value::Null),
                    other => values
                        .iter()
                        .find(|(s, _)| s.role == SlotRole::Field && s.column.as_deref() == Some(&col.name))
                        .map(|(_, v)| v.clone())
                        .unwrap_or_else(|| default_value(other)),
                };
                row.insert(col.name.clone(), v);
            }
            let id = db.next_id(&table);
            row.insert("id".into(), Value::Int(id));
            let payload = vec![PayloadEntity { kind: spec.entity.clone(), id, fields: row.clone() }];
            Ok((ok(payload, Some((EffectKind::Insert, id))), Some(Mutation::Insert { table: table.clone(), id, row })))
        }
        ToolAction::Lookup => {
            let (t, id) = target.expect("lookup tools have a target slot");
            let row = db.row(&t, id).expect("checked above").clone();
            Ok((ok(vec![PayloadEntity { kind: spec.entity.clone(), id, fields: row }], None), None))
        }
        ToolAction::Update | ToolAction::Cancel => {
            let (t, id) = target.expect("update tools have a target slot");
            let row = db.row(&t, id).expect("checked above");
            if row.get("status") == Some(&cancelled) {
                return Ok((
                    ToolResult::failed(ToolStatus::PreconditionFailed, format!("{} {id} is cancelled", spec.entity)),
                    None,
                ));
            }
            let changes = if spec.action == ToolAction::Cancel {
                vec![("status".to_string(), cancelled.clone())]
            } else {
                field_values()
            };
            let payload = if spec.action == ToolAction::Cancel {
                Vec::new()
            } else {
                let mut updated = row.clone();
                for (c, v) in &changes {
                    updated.insert(c.clone(), v.clone());
                }
                vec![PayloadEntity { kind: spec.entity.clone(), id, fields: updated }]
            };
            Ok((ok(payload, Some((EffectKind::Update, id))), Some(Mutation::Set { table: t, id, changes })))
        }
        ToolAction::Delete => {
            let (t, id) = target.expect("delete tools have a target slot");
            Ok((ok(Vec::new(), Some((EffectKind::Delete, id))), Some(Mutation::Delete { table: t, id })))
        }
    }
}

fn default_value(ty: &ColumnType) -> Value {
    match ty {
        ColumnType::Id | ColumnType::Ref { .. } => Value::Null,
        ColumnType::Int => Value::Int(0),
        ColumnType::Text => Value::text(""),
        ColumnType::Enum { values } => Value::text(values.first().cloned().unwrap_or_default()),
    }
}

/// Evaluates and commits in place. The database changes only on `Ok`.
pub fn apply_tool(db: &mut DatabaseState, call: &ToolCall, graph: &ToolGraph) -> Result<ToolResult, ExecError> {
    let (result, mutation) = evaluate(db, call, graph)?;
    if let Some(m) = mutation {
        commit(db, m);
    }
    Ok(result)
}

/// Pure form: returns the result and the successor state.
pub fn execute_tool(
    db: &DatabaseState,
    call: &ToolCall,
    graph: &ToolGraph,
) -> Result<(ToolResult, DatabaseState), ExecError> {
    let mut next = db.clone();
    let result = apply_tool(&mut next, call, graph)?;
    Ok((result, next))
}

#[cfg(test)]
pub(crate) mod fixtures {
    //! A tiny hand-built shop domain used across unit tests.

    use super::*;
    use crate::domain::{ParamSlot, TableEffect, ToolSpec};
    use crate::schema::{Column, DomainSchema, EntityKind};

    pub fn status_col() -> Column {
        Column::new("status", ColumnType::Enum { values: styles::STATUSES.iter().map(|s| s.to_string()).collect() })
    }

    pub fn schema() -> DomainSchema {
        let mut tables = BTreeMap::new();
        tables.insert(
            "customers".into(),
            vec![
                Column::new("id", ColumnType::Id),
                status_col(),
                Column::new("tier", ColumnType::Enum { values: vec!["basic".into(), "premium".into()] }),
            ],
        );
        tables.insert(
            "orders".into(),
            vec![
                Column::new("id", ColumnType::Id),
                status_col(),
                Column::new("customer_id", ColumnType::Ref { entity: "customer".into() }),
                Column::new("quantity", ColumnType::Int),
            ],
        );
        DomainSchema {
            domain: "shop".into(),
            tables,
            entity_kinds: vec![
                EntityKind { name: "customer".into(), table: "customers".into() },
                EntityKind { name: "order".into(), table: "orders".into() },
            ],
        }
    }

    pub fn id_slot(kind: &str, role: SlotRole, source: SlotSource) -> ParamSlot {
        ParamSlot {
            name: format!("{kind}_id"),
            value_kind: ValueKind::EntityId,
            source,
            role,
            entity: Some(kind.into()),
            column: if role == SlotRole::Reference { Some(format!("{kind}_id")) } else { None },
            enum_values: vec![],
        }
    }

    pub fn qty_slot() -> ParamSlot {
        ParamSlot {
            name: "quantity".into(),
            value_kind: ValueKind::Scalar,
            source: SlotSource::UserProvided,
            role: SlotRole::Field,
            entity: None,
            column: Some("quantity".into()),
            enum_values: vec![],
        }
    }

    pub fn tool(id: &str, action: ToolAction, entity: &str, inputs: Vec<ParamSlot>) -> ToolSpec {
        let table = if entity == "order" { "orders" } else { "customers" };
        let writes = match action {
            ToolAction::Create => vec![TableEffect { table: table.into(), effect: EffectKind::Insert }],
            ToolAction::Lookup => vec![],
            ToolAction::Update | ToolAction::Cancel => {
                vec![TableEffect { table: table.into(), effect: EffectKind::Update }]
            }
            ToolAction::Delete => vec![TableEffect { table: table.into(), effect: EffectKind::Delete }],
        };
        let output_entities = match action {
            ToolAction::Cancel | ToolAction::Delete => vec![],
            _ => vec![entity.to_string()],
        };
        ToolSpec {
            id: id.into(),
            domain: "shop".into(),
            action,
            entity: entity.into(),
            inputs,
            reads: vec![table.into()],
            writes,
            output_entities,
        }
    }

    /// get_customer -> create_order -> cancel_order, plus lookup/update tools for orders.
    pub fn graph() -> ToolGraph {
        use SlotRole::*;
        let by = |t: &str| SlotSource::ProducedBy { tool: t.into() };
        let tools = vec![
            tool(
                "get_customer",
                ToolAction::Lookup,
                "customer",
                vec![id_slot("customer", Target, SlotSource::UserProvided)],
            ),
            tool(
                "create_order",
                ToolAction::Create,
                "order",
                vec![id_slot("customer", Reference, by("get_customer")), qty_slot()],
            ),
            tool("get_order", ToolAction::Lookup, "order", vec![id_slot("order", Target, by("create_order"))]),
            tool(
                "update_order_quantity",
                ToolAction::Update,
                "order",
                vec![id_slot("order", Target, by("create_order")), qty_slot()],
            ),
            tool("cancel_order", ToolAction::Cancel, "order", vec![id_slot("order", Target, by("create_order"))]),
        ];
        ToolGraph::new("shop", schema(), tools)
    }

    pub fn db_with_customer() -> DatabaseState {
        let s = schema();
        let mut db = DatabaseState::empty(&s);
        let mut row = Row::new();
        row.insert("status".into(), Value::text("active"));
        row.insert("tier".into(), Value::text("basic"));
        db.insert("customers", row);
        db
    }

    pub fn order_row(customer: EntityId) -> Row {
        let mut row = Row::new();
        row.insert("status".into(), Value::text("active"));
        row.insert("customer_id".into(), Value::Int(customer));
        row.insert("quantity".into(), Value::Int(1));
        row
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn lookup_existing_entity_returns_payload() {
        let g = graph();
        let db = db_with_customer();
        let (r, next) =
            execute_tool(&db, &ToolCall::new("get_customer").arg("customer_id", Value::Int(1)), &g).unwrap();
        assert_eq!(r.status, ToolStatus::Ok);
        assert_eq!(r.entity_id("customer"), Some(1));
        assert_eq!(r.payload[0].fields.get("tier"), Some(&Value::text("basic")));
        assert_eq!(next, db);
    }

    #[test]
    fn cancel_missing_order_is_a_noop() {
        let g = graph();
        let db = db_with_customer();
        let (r, next) = execute_tool(&db, &ToolCall::new("cancel_order").arg("order_id", Value::Int(17)), &g).unwrap();
        assert_eq!(r.status, ToolStatus::MissingEntity);
        assert_eq!(next, db);
    }

    #[test]
    fn create_then_cancel() {
        let g = graph();
        let mut db = db_with_customer();
        let call = ToolCall::new("create_order").arg("customer_id", Value::Int(1)).arg("quantity", Value::Int(3));
        let r = apply_tool(&mut db, &call, &g).unwrap();
        assert!(r.is_ok());
        let id = r.entity_id("order").unwrap();
        assert_eq!(id, 1);
        let row = db.row("orders", id).unwrap();
        assert_eq!(row.get("status"), Some(&Value::text("created")));
        assert_eq!(row.get("customer_id"), Some(&Value::Int(1)));
        db.conforms(&schema()).unwrap();

        let cancel = ToolCall::new("cancel_order").arg("order_id", Value::Int(id));
        assert!(apply_tool(&mut db, &cancel, &g).unwrap().is_ok());
        let again = apply_tool(&mut db, &cancel, &g).unwrap();
        assert_eq!(again.status, ToolStatus::PreconditionFailed);
        let upd = ToolCall::new("update_order_quantity").arg("order_id", Value::Int(id)).arg("quantity", Value::Int(9));
        assert_eq!(apply_tool(&mut db, &upd, &g).unwrap().status, ToolStatus::PreconditionFailed);
    }

    #[test]
    fn missing_and_bad_arguments() {
        let g = graph();
        let db = db_with_customer();
        let (r, _) = execute_tool(&db, &ToolCall::new("create_order").arg("customer_id", Value::Int(1)), &g).unwrap();
        assert_eq!(r.status, ToolStatus::MissingArg);
        let bad = ToolCall::new("create_order").arg("customer_id", Value::text("one")).arg("quantity", Value::Int(1));
        assert_eq!(execute_tool(&db, &bad, &g).unwrap().0.status, ToolStatus::PreconditionFailed);
    }

    #[test]
    fn unknown_tool_is_a_fault() {
        let g = graph();
        let db = db_with_customer();
        assert_eq!(
            execute_tool(&db, &ToolCall::new("launch_rocket"), &g).unwrap_err(),
            ExecError::UnknownTool("launch_rocket".into())
        );
    }

    #[test]
    fn evaluation_is_pure() {
        let g = graph();
        let db = db_with_customer();
        let call = ToolCall::new("create_order").arg("customer_id", Value::Int(1)).arg("quantity", Value::Int(3));
        let a = execute_tool(&db, &call, &g).unwrap();
        let b = execute_tool(&db, &call, &g).unwrap();
        assert_eq!(a, b);
    }
}
