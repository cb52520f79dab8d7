//! Typed database model shared by the generator, executor and rubric checks.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Entity ids are positive integers, unique within the owning table.
pub type EntityId = i64;

/// A cell value. Enum cells are stored as text and checked against the column domain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Int(i64),
    Text(String),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnType {
    /// Primary key of the owning table.
    Id,
    /// Foreign reference to a row of another entity kind; may be null.
    Ref {
        entity: String,
    },
    Int,
    Enum {
        values: Vec<String>,
    },
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Self { name: name.into(), ty }
    }

    /// Does `value` fit this column's type?
    pub fn accepts(&self, value: &Value) -> bool {
        match (&self.ty, value) {
            (ColumnType::Id, Value::Int(v)) => *v > 0,
            (ColumnType::Ref { .. }, Value::Null) => true,
            (ColumnType::Ref { .. }, Value::Int(v)) => *v > 0,
            (ColumnType::Int, Value::Int(_)) => true,
            (ColumnType::Enum { values }, Value::Text(s)) => values.iter().any(|v| v == s),
            (ColumnType::Text, Value::Text(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityKind {
    pub name: String,
    pub table: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSchema {
    pub domain: String,
    pub tables: BTreeMap<String, Vec<Column>>,
    pub entity_kinds: Vec<EntityKind>,
}

impl DomainSchema {
    pub fn table_of(&self, kind: &str) -> Option<&str> {
        self.entity_kinds.iter().find(|k| k.name == kind).map(|k| k.table.as_str())
    }

    pub fn columns(&self, table: &str) -> Option<&[Column]> {
        self.tables.get(table).map(Vec::as_slice)
    }

    pub fn column(&self, table: &str, name: &str) -> Option<&Column> {
        self.columns(table)?.iter().find(|c| c.name == name)
    }

    /// Checks the schema's own invariants: one table per kind, unique column names.
    pub fn check(&self) -> Result<(), String> {
        let mut seen_tables = BTreeMap::new();
        for kind in &self.entity_kinds {
            if !self.tables.contains_key(&kind.table) {
                return Err(format!("entity kind {} maps to unknown table {}", kind.name, kind.table));
            }
            if let Some(other) = seen_tables.insert(kind.table.clone(), kind.name.clone()) {
                return Err(format!("table {} owned by both {} and {}", kind.table, other, kind.name));
            }
        }
        for (table, cols) in &self.tables {
            let mut names: Vec<&str> = cols.iter().map(|c| c.name.as_str()).collect();
            names.sort_unstable();
            if names.windows(2).any(|w| w[0] == w[1]) {
                return Err(format!("duplicate column name in table {table}"));
            }
            for col in cols {
                if let ColumnType::Enum { values } = &col.ty {
                    if values.is_empty() {
                        return Err(format!("enum column {table}.{} has no values", col.name));
                    }
                }
            }
        }
        Ok(())
    }
}

pub type Row = BTreeMap<String, Value>;

/// The full database: table name to rows keyed by entity id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseState {
    pub tables: BTreeMap<String, BTreeMap<EntityId, Row>>,
}

/// One cell that differs between two database states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowChange {
    Inserted { table: String, id: EntityId, row: Row },
    Updated { table: String, id: EntityId, column: String, value: Value },
    Deleted { table: String, id: EntityId },
}

impl DatabaseState {
    /// Empty tables for every table of the schema.
    pub fn empty(schema: &DomainSchema) -> Self {
        Self { tables: schema.tables.keys().map(|t| (t.clone(), BTreeMap::new())).collect() }
    }

    pub fn row(&self, table: &str, id: EntityId) -> Option<&Row> {
        self.tables.get(table)?.get(&id)
    }

    pub fn row_mut(&mut self, table: &str, id: EntityId) -> Option<&mut Row> {
        self.tables.get_mut(table)?.get_mut(&id)
    }

    pub fn next_id(&self, table: &str) -> EntityId {
        self.tables.get(table).and_then(|rows| rows.keys().next_back().copied()).unwrap_or(0) + 1
    }

    /// Inserts `row` under a fresh id (max + 1) and returns that id.
    pub fn insert(&mut self, table: &str, mut row: Row) -> EntityId {
        let id = self.next_id(table);
        row.insert("id".into(), Value::Int(id));
        self.tables.entry(table.to_string()).or_default().insert(id, row);
        id
    }

    pub fn row_count(&self) -> usize {
        self.tables.values().map(BTreeMap::len).sum()
    }

    /// Every row has exactly the schema's columns with well-typed values and a matching id.
    pub fn conforms(&self, schema: &DomainSchema) -> Result<(), String> {
        for (table, rows) in &self.tables {
            let cols = schema.columns(table).ok_or_else(|| format!("table {table} not in schema"))?;
            for (id, row) in rows {
                if row.get("id") != Some(&Value::Int(*id)) {
                    return Err(format!("{table}#{id}: id column mismatch"));
                }
                if row.len() != cols.len() {
                    return Err(format!("{table}#{id}: expected {} columns, found {}", cols.len(), row.len()));
                }
                for col in cols {
                    match row.get(&col.name) {
                        Some(v) if col.accepts(v) => {}
                        Some(v) => return Err(format!("{table}#{id}.{}: bad value {v}", col.name)),
                        None => return Err(format!("{table}#{id}: missing column {}", col.name)),
                    }
                }
            }
        }
        Ok(())
    }

    /// Cell-level differences turning `self` into `after`, in table/id/column order.
    pub fn diff(&self, after: &DatabaseState) -> Vec<RowChange> {
        let empty = BTreeMap::new();
        let mut out = Vec::new();
        let names: std::collections::BTreeSet<&String> = self.tables.keys().chain(after.tables.keys()).collect();
        for table in names {
            let before_rows = self.tables.get(table).unwrap_or(&empty);
            let after_rows = after.tables.get(table).unwrap_or(&empty);
            for (id, row) in after_rows {
                match before_rows.get(id) {
                    None => out.push(RowChange::Inserted { table: table.clone(), id: *id, row: row.clone() }),
                    Some(old) => {
                        for (col, value) in row {
                            if old.get(col) != Some(value) {
                                out.push(RowChange::Updated {
                                    table: table.clone(),
                                    id: *id,
                                    column: col.clone(),
                                    value: value.clone(),
                                });
                            }
                        }
                    }
                }
            }
            for id in before_rows.keys() {
                if !after_rows.contains_key(id) {
                    out.push(RowChange::Deleted { table: table.clone(), id: *id });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> DomainSchema {
        let mut tables = BTreeMap::new();
        tables.insert(
            "orders".to_string(),
            vec![
                Column::new("id", ColumnType::Id),
                Column::new("status", ColumnType::Enum { values: vec!["created".into(), "cancelled".into()] }),
                Column::new("qty", ColumnType::Int),
            ],
        );
        DomainSchema {
            domain: "shop".into(),
            tables,
            entity_kinds: vec![EntityKind { name: "order".into(), table: "orders".into() }],
        }
    }

    fn order(status: &str, qty: i64) -> Row {
        let mut r = Row::new();
        r.insert("status".into(), Value::text(status));
        r.insert("qty".into(), Value::Int(qty));
        r
    }

    #[test]
    fn insert_assigns_max_plus_one() {
        let s = schema();
        let mut db = DatabaseState::empty(&s);
        assert_eq!(db.insert("orders", order("created", 1)), 1);
        assert_eq!(db.insert("orders", order("created", 2)), 2);
        db.tables.get_mut("orders").unwrap().remove(&1);
        assert_eq!(db.insert("orders", order("created", 3)), 3);
        db.conforms(&s).unwrap();
    }

    #[test]
    fn conformance_rejects_bad_enum() {
        let s = schema();
        let mut db = DatabaseState::empty(&s);
        db.insert("orders", order("shipped", 1));
        assert!(db.conforms(&s).is_err());
    }

    #[test]
    fn diff_reports_each_kind_of_change() {
        let s = schema();
        let mut a = DatabaseState::empty(&s);
        a.insert("orders", order("created", 1));
        a.insert("orders", order("created", 2));
        let mut b = a.clone();
        b.row_mut("orders", 1).unwrap().insert("status".into(), Value::text("cancelled"));
        b.insert("orders", order("created", 5));
        b.tables.get_mut("orders").unwrap().remove(&2);
        let d = a.diff(&b);
        assert_eq!(d.len(), 3);
        assert!(matches!(&d[0], RowChange::Updated { id: 1, column, .. } if column == "status"));
        assert!(matches!(&d[1], RowChange::Inserted { id: 3, .. }));
        assert!(matches!(&d[2], RowChange::Deleted { id: 2, .. }));
    }

    #[test]
    fn value_json_is_untagged() {
        let v = vec![Value::Null, Value::Int(3), Value::text("x")];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[null,3,"x"]"#);
        let back: Vec<Value> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn schema_check_catches_duplicates() {
        let mut s = schema();
        s.tables.get_mut("orders").unwrap().push(Column::new("qty", ColumnType::Int));
        assert!(s.check().is_err());
    }
}
