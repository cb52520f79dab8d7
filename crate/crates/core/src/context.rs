//! Context-window policies: summarize past a token threshold, discard on a turn
//! schedule, or both.

use serde::{Deserialize, Serialize};

use crate::exec::ToolStatus;
use crate::schema::{EntityId, Value};

pub const DEFAULT_SUMMARY_THRESHOLD: u64 = 80_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Off,
    Summary,
    DiscardAll,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextPolicy {
    pub kind: PolicyKind,
    pub summary_threshold_tokens: u64,
    /// Turn threshold before the first discard.
    pub max_turns: u32,
    /// Explicit thresholds per reset; empty means `max_turns` doubled at every reset.
    pub discard_schedule: Vec<u32>,
    /// Tool results kept verbatim by the summarizer.
    pub keep_last_k: usize,
}

impl Default for ContextPolicy {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Hybrid,
            summary_threshold_tokens: DEFAULT_SUMMARY_THRESHOLD,
            max_turns: 40,
            discard_schedule: Vec::new(),
            keep_last_k: 2,
        }
    }
}

impl ContextPolicy {
    pub fn off() -> Self {
        Self { kind: PolicyKind::Off, ..Self::default() }
    }

    pub fn of_kind(kind: PolicyKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.summary_threshold_tokens == 0 || self.max_turns == 0 {
            return Err("context thresholds must be positive".into());
        }
        if self.discard_schedule.contains(&0) {
            return Err("discard schedule entries must be positive".into());
        }
        if self.discard_schedule.windows(2).any(|w| w[0] > w[1]) {
            return Err("discard schedule must be nondecreasing".into());
        }
        Ok(())
    }

    /// Turn threshold that applies after `resets` discards.
    pub fn discard_threshold(&self, resets: u32) -> u32 {
        if self.discard_schedule.is_empty() {
            self.max_turns.saturating_mul(1u32.checked_shl(resets).unwrap_or(u32::MAX))
        } else {
            self.discard_schedule[(resets as usize).min(self.discard_schedule.len() - 1)]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextAction {
    None,
    Summarize,
    DiscardAll,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextState {
    pub tokens: u64,
    /// Turns since the last reset.
    pub turns: u32,
    pub resets: u32,
    pub base_tokens: u64,
}

impl ContextState {
    pub fn new(base_tokens: u64) -> Self {
        Self { tokens: base_tokens, turns: 0, resets: 0, base_tokens }
    }

    /// Restart from the initial prompt and advance the schedule.
    pub fn discard(&mut self) {
        self.tokens = self.base_tokens;
        self.turns = 0;
        self.resets += 1;
    }
}

/// Decides the context action for the current state. Discard wins when both fire.
pub fn apply_policy(state: &ContextState, policy: &ContextPolicy) -> ContextAction {
    let summarize = state.tokens > policy.summary_threshold_tokens;
    let discard = state.turns > policy.discard_threshold(state.resets);
    match policy.kind {
        PolicyKind::Off => ContextAction::None,
        PolicyKind::Summary if summarize => ContextAction::Summarize,
        PolicyKind::DiscardAll if discard => ContextAction::DiscardAll,
        PolicyKind::Hybrid if discard => ContextAction::DiscardAll,
        PolicyKind::Hybrid if summarize => ContextAction::Summarize,
        _ => ContextAction::None,
    }
}

/// One entity id obtained from a tool, remembered by producer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdEntry {
    pub tool: String,
    pub kind: String,
    pub id: EntityId,
}

/// Items in the live context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case")]
pub enum ContextItem {
    Prompt {
        tokens: u64,
    },
    Agent {
        tokens: u64,
    },
    ToolCall {
        tool: String,
        tokens: u64,
    },
    ToolResult {
        tool: String,
        status: ToolStatus,
        ids: Vec<(String, EntityId)>,
        tokens: u64,
    },
    User {
        revealed: Vec<(String, Value)>,
        tokens: u64,
    },
    /// An id re-fetched after a reset.
    Recall {
        entry: IdEntry,
        tokens: u64,
    },
    Digest(Digest),
}

impl ContextItem {
    pub fn tokens(&self) -> u64 {
        match self {
            Self::Prompt { tokens }
            | Self::Agent { tokens }
            | Self::ToolCall { tokens, .. }
            | Self::ToolResult { tokens, .. }
            | Self::User { tokens, .. }
            | Self::Recall { tokens, .. } => *tokens,
            Self::Digest(d) => d.cost(),
        }
    }
}

/// Structural summary of replaced tool results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Digest {
    /// One line per summarized result, e.g. `get_order:ok`.
    pub facts: Vec<String>,
    /// Every entity id seen in a summarized or kept result.
    pub ids: Vec<IdEntry>,
    /// The last k tool results, unchanged.
    pub verbatim: Vec<ContextItem>,
}

pub const DIGEST_OVERHEAD: u64 = 8;
pub const TOKENS_PER_FACT: u64 = 4;
pub const TOKENS_PER_ID: u64 = 3;

impl Digest {
    pub fn is_empty(&self) -> bool {
        self.facts.is_empty() && self.ids.is_empty() && self.verbatim.is_empty()
    }

    /// Token cost. Ids already visible in a verbatim result are not charged twice.
    pub fn cost(&self) -> u64 {
        if self.is_empty() {
            return 0;
        }
        let verbatim_ids: Vec<(&str, EntityId)> = self
            .verbatim
            .iter()
            .flat_map(|item| match item {
                ContextItem::ToolResult { ids, .. } => ids.iter().map(|(k, i)| (k.as_str(), *i)).collect(),
                _ => Vec::new(),
            })
            .collect();
        let charged = self.ids.iter().filter(|e| !verbatim_ids.contains(&(e.kind.as_str(), e.id))).count() as u64;
        DIGEST_OVERHEAD
            + TOKENS_PER_FACT * self.facts.len() as u64
            + TOKENS_PER_ID * charged
            + self.verbatim.iter().map(ContextItem::tokens).sum::<u64>()
    }

    /// Latest id produced by `tool`, if remembered.
    pub fn binding(&self, tool: &str) -> Option<EntityId> {
        self.ids.iter().rev().find(|e| e.tool == tool).map(|e| e.id)
    }
}

fn push_id(ids: &mut Vec<IdEntry>, entry: IdEntry) {
    ids.retain(|e| e != &entry);
    ids.push(entry);
}

/// Condenses the tool results of `history`, keeping the last `keep_last_k` verbatim.
///
/// A digest already in the history is merged in. Non-result items are ignored;
/// the caller keeps them in place.
pub fn summarize(history: &[ContextItem], keep_last_k: usize) -> Digest {
    let mut digest = Digest::default();
    let results: Vec<&ContextItem> = history.iter().filter(|i| matches!(i, ContextItem::ToolResult { .. })).collect();
    for item in history {
        match item {
            ContextItem::Digest(prior) => {
                digest.facts.extend(prior.facts.iter().cloned());
                for e in &prior.ids {
                    push_id(&mut digest.ids, e.clone());
                }
                for v in &prior.verbatim {
                    if let ContextItem::ToolResult { tool, status, .. } = v {
                        digest.facts.push(format!("{tool}:{}", status_name(*status)));
                    }
                }
            }
            ContextItem::ToolResult { tool, status, ids, .. } => {
                for (kind, id) in ids {
                    push_id(&mut digest.ids, IdEntry { tool: tool.clone(), kind: kind.clone(), id: *id });
                }
                let idx = results.iter().position(|r| std::ptr::eq(*r, item)).expect("collected above");
                if idx + keep_last_k < results.len() {
                    digest.facts.push(format!("{tool}:{}", status_name(*status)));
                } else {
                    digest.verbatim.push(item.clone());
                }
            }
            _ => {}
        }
    }
    digest
}

fn status_name(s: ToolStatus) -> &'static str {
    match s {
        ToolStatus::Ok => "ok",
        ToolStatus::MissingArg => "missing_arg",
        ToolStatus::MissingEntity => "missing_entity",
        ToolStatus::PreconditionFailed => "precondition_failed",
        ToolStatus::TransientFailure => "transient_failure",
    }
}

/// Replaces tool results and any prior digest in `items` by one digest.
///
/// Returns false and leaves `items` untouched unless this strictly lowers the token count.
pub fn compact(items: &mut Vec<ContextItem>, keep_last_k: usize) -> bool {
    let replaced: u64 = items
        .iter()
        .filter(|i| matches!(i, ContextItem::ToolResult { .. } | ContextItem::Digest(_)))
        .map(ContextItem::tokens)
        .sum();
    let digest = summarize(items, keep_last_k);
    if digest.cost() >= replaced {
        return false;
    }
    let pos = items.iter().position(|i| matches!(i, ContextItem::ToolResult { .. } | ContextItem::Digest(_)));
    items.retain(|i| !matches!(i, ContextItem::ToolResult { .. } | ContextItem::Digest(_)));
    items.insert(pos.unwrap_or(items.len()).min(items.len()), ContextItem::Digest(digest));
    true
}

pub fn live_tokens(items: &[ContextItem]) -> u64 {
    items.iter().map(ContextItem::tokens).sum()
}
