//! Tool chains, their symbolic feasibility, and replay with produced-by bindings.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{SlotRole, ToolAction, ToolGraph, ToolSpec};
use crate::exec::{apply_tool, ExecError, ToolCall, ToolResult};
use crate::schema::{DatabaseState, EntityId, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolChain {
    pub tools: Vec<String>,
    pub domain: String,
}

/// A chain plus the concrete user-provided argument values of each step.
///
/// Produced-by slots are not stored; replay binds them to the producing
/// step's output in the same run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedChain {
    #[serde(flatten)]
    pub chain: ToolChain,
    pub user_args: Vec<BTreeMap<String, Value>>,
}

impl GroundedChain {
    pub fn len(&self) -> usize {
        self.chain.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chain.tools.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowState {
    Live,
    Cancelled,
    Gone,
}

/// Tracks which rows a partial chain creates, cancels or deletes, so a candidate
/// step can be checked for executability without touching a database.
///
/// Rows for user-provided entity slots are always fresh, so only rows that flow
/// through produced-by bindings can be invalidated by earlier steps.
#[derive(Debug, Clone)]
pub struct ChainTracker<'g> {
    graph: &'g ToolGraph,
    in_chain: Vec<bool>,
    output_row: HashMap<usize, usize>,
    rows: Vec<RowState>,
    order: Vec<usize>,
    has_write: bool,
}

impl<'g> ChainTracker<'g> {
    pub fn new(graph: &'g ToolGraph) -> Self {
        Self {
            graph,
            in_chain: vec![false; graph.len()],
            output_row: HashMap::new(),
            rows: Vec::new(),
            order: Vec::new(),
            has_write: false,
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.in_chain[i]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn has_write(&self) -> bool {
        self.has_write
    }

    pub fn indices(&self) -> &[usize] {
        &self.order
    }

    /// Would tool `i` execute successfully if appended now?
    pub fn can_append(&self, i: usize) -> bool {
        if self.in_chain[i] {
            return false;
        }
        let tool = self.graph.tool_at(i);
        for slot in &tool.inputs {
            let Some(p) = slot.producer() else { continue };
            let Some(pi) = self.graph.index_of(p) else { return false };
            if !self.in_chain[pi] {
                return false;
            }
            let Some(&row) = self.output_row.get(&pi) else { return false };
            match self.rows[row] {
                RowState::Gone => return false,
                RowState::Cancelled
                    if slot.role == SlotRole::Target
                        && matches!(tool.action, ToolAction::Update | ToolAction::Cancel) =>
                {
                    return false
                }
                _ => {}
            }
        }
        true
    }

    pub fn append(&mut self, i: usize) {
        debug_assert!(self.can_append(i));
        let tool = self.graph.tool_at(i);
        let target_row = tool.target_slot().map(|slot| match slot.producer() {
            Some(p) => self.output_row[&self.graph.index_of(p).expect("checked")],
            None => self.fresh_row(),
        });
        match tool.action {
            ToolAction::Create => {
                let r = self.fresh_row();
                self.output_row.insert(i, r);
            }
            ToolAction::Lookup | ToolAction::Update => {
                if let Some(r) = target_row {
                    self.output_row.insert(i, r);
                }
            }
            ToolAction::Cancel => self.rows[target_row.expect("cancel has a target")] = RowState::Cancelled,
            ToolAction::Delete => self.rows[target_row.expect("delete has a target")] = RowState::Gone,
        }
        self.has_write |= tool.action.is_write();
        self.in_chain[i] = true;
        self.order.push(i);
    }

    fn fresh_row(&mut self) -> usize {
        self.rows.push(RowState::Live);
        self.rows.len() - 1
    }
}

/// Checks that `tools` is a dependency-feasible, executable ordering.
pub fn is_feasible(graph: &ToolGraph, tools: &[String]) -> bool {
    let mut tracker = ChainTracker::new(graph);
    for id in tools {
        match graph.index_of(id) {
            Some(i) if tracker.can_append(i) => tracker.append(i),
            _ => return false,
        }
    }
    !tools.is_empty()
}

/// Builds the call for one step from its user arguments and current bindings.
pub fn bind_call(
    spec: &ToolSpec,
    user_args: &BTreeMap<String, Value>,
    bindings: &BTreeMap<String, EntityId>,
) -> ToolCall {
    let mut args = user_args.clone();
    for slot in &spec.inputs {
        if let Some(p) = slot.producer() {
            if let Some(id) = bindings.get(p) {
                args.insert(slot.name.clone(), Value::Int(*id));
            }
        }
    }
    ToolCall { tool: spec.id.clone(), args }
}

/// Records the output row of a successful step for later produced-by slots.
pub fn record_binding(spec: &ToolSpec, result: &ToolResult, bindings: &mut BTreeMap<String, EntityId>) {
    if !result.is_ok() {
        return;
    }
    if let Some(id) = spec.output_entities.first().and_then(|k| result.entity_id(k)) {
        bindings.insert(spec.id.clone(), id);
    }
}

/// Replays a grounded chain in place, optionally skipping one step.
pub fn replay(
    db: &mut DatabaseState,
    graph: &ToolGraph,
    chain: &GroundedChain,
    skip: Option<usize>,
) -> Result<Vec<(ToolCall, ToolResult)>, ExecError> {
    let mut bindings = BTreeMap::new();
    let mut out = Vec::with_capacity(chain.len());
    for (i, id) in chain.chain.tools.iter().enumerate() {
        if skip == Some(i) {
            continue;
        }
        let spec = graph.tool(id).ok_or_else(|| ExecError::UnknownTool(id.clone()))?;
        let call = bind_call(spec, &chain.user_args[i], &bindings);
        let result = apply_tool(db, &call, graph)?;
        record_binding(spec, &result, &mut bindings);
        out.push((call, result));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::fixtures;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn dependency_order_matters() {
        let g = fixtures::graph();
        assert!(is_feasible(&g, &ids(&["get_customer", "create_order", "cancel_order"])));
        assert!(!is_feasible(&g, &ids(&["create_order", "get_customer"])));
        assert!(!is_feasible(&g, &[]));
    }

    #[test]
    fn cancelled_rows_block_updates_but_not_lookups() {
        let g = fixtures::graph();
        assert!(!is_feasible(&g, &ids(&["get_customer", "create_order", "cancel_order", "update_order_quantity"])));
        assert!(is_feasible(&g, &ids(&["get_customer", "create_order", "cancel_order", "get_order"])));
    }

    #[test]
    fn replay_binds_outputs() {
        let g = fixtures::graph();
        let mut db = fixtures::db_with_customer();
        let mut a0 = BTreeMap::new();
        a0.insert("customer_id".into(), Value::Int(1));
        let mut a1 = BTreeMap::new();
        a1.insert("quantity".into(), Value::Int(4));
        let chain = GroundedChain {
            chain: ToolChain { tools: ids(&["get_customer", "create_order", "cancel_order"]), domain: "shop".into() },
            user_args: vec![a0, a1, BTreeMap::new()],
        };
        let steps = replay(&mut db, &g, &chain, None).unwrap();
        assert!(steps.iter().all(|(_, r)| r.is_ok()));
        assert_eq!(db.row("orders", 1).unwrap().get("status"), Some(&Value::text("cancelled")));

        let mut db2 = fixtures::db_with_customer();
        let ablated = replay(&mut db2, &g, &chain, Some(1)).unwrap();
        assert_eq!(ablated.len(), 2);
        assert_eq!(ablated[1].1.status, crate::exec::ToolStatus::MissingArg);
    }
}
