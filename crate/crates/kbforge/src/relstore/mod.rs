//! Typed in-memory relational store with TSV ingestion and a conjunctive-query
//! evaluator.
//!
//! The store is the universe every other module runs over: extractor inputs,
//! distant-supervision joins, and rule grounding are all conjunctive queries
//! against relations held here. It is single-writer; once loading is complete,
//! [`Store::eval_query`] is safe for concurrent readers and never mutates.

mod query;
mod tsv;

pub use query::{CmpOp, ColumnRef, ConjunctiveQuery, FromItem, Operand, Predicate, QueryResult};
pub use tsv::{escape_field, format_value, parse_field, unescape_field};

/// Serializes one row as a single TSV line (no trailing newline).
pub fn tsv_line(values: &[Value]) -> String {
    tsv::row_to_line(values)
}

/// Parses one TSV line against a schema; `line_no` is 1-based, for errors.
pub fn parse_tsv_line(schema: &Schema, line: &str, line_no: usize) -> Result<Tuple, RelStoreError> {
    tsv::parse_line(schema, line, line_no)
}

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use thiserror::Error;

/// Column types supported by the store.
///
/// `Json` columns carry raw JSON text (parse trees, token arrays) and are
/// opaque to predicates: only equality on the raw text is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Bool,
    Int64,
    Float64,
    Text,
    Json,
}

impl std::fmt::Display for ColumnType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ColumnType::Bool => "bool",
            ColumnType::Int64 => "int64",
            ColumnType::Float64 => "float64",
            ColumnType::Text => "text",
            ColumnType::Json => "json",
        };
        f.write_str(s)
    }
}

/// A tagged scalar plus a distinguished null.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Json(String),
}

impl Value {
    /// The column type this value carries, or `None` for null.
    pub fn column_type(&self) -> Option<ColumnType> {
        match self {
            Value::Null => None,
            Value::Bool(_) => Some(ColumnType::Bool),
            Value::Int(_) => Some(ColumnType::Int64),
            Value::Float(_) => Some(ColumnType::Float64),
            Value::Text(_) => Some(ColumnType::Text),
            Value::Json(_) => Some(ColumnType::Json),
        }
    }

    /// Whether this value may be stored in a column of type `ty`.
    pub fn matches(&self, ty: ColumnType) -> bool {
        match self.column_type() {
            None => true, // null fits any column
            Some(t) => t == ty,
        }
    }

    fn type_rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) => 2,
            Value::Float(_) => 3,
            Value::Text(_) => 4,
            Value::Json(_) => 5,
        }
    }
}

// Equality, ordering and hashing define the canonical total order used for
// deterministic query results and for map keys. Floats compare by total_cmp
// and hash by bit pattern; this is NOT predicate semantics (see query.rs).
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Json(a), Value::Json(b)) => a.cmp(b),
            _ => self.type_rank().cmp(&other.type_rank()),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u8(self.type_rank());
        match self {
            Value::Null => {}
            Value::Bool(b) => b.hash(state),
            Value::Int(i) => i.hash(state),
            Value::Float(f) => f.to_bits().hash(state),
            Value::Text(s) => s.hash(state),
            Value::Json(s) => s.hash(state),
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format_value(self))
    }
}

/// One column of a relation schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

/// A relation schema: a name plus an ordered, non-empty column list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub name: String,
    pub columns: Vec<Column>,
}

impl Schema {
    pub fn new(name: impl Into<String>, columns: Vec<(&str, ColumnType)>) -> Self {
        Schema {
            name: name.into(),
            columns: columns
                .into_iter()
                .map(|(n, ty)| Column { name: n.into(), ty })
                .collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// An ordered list of values whose arity matches some schema.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tuple(pub Vec<Value>);

impl Tuple {
    pub fn arity(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<Value>> for Tuple {
    fn from(values: Vec<Value>) -> Self {
        Tuple(values)
    }
}

/// A named, typed collection of tuples.
#[derive(Debug, Clone)]
pub struct Relation {
    pub schema: Schema,
    pub rows: Vec<Tuple>,
}

/// Errors from store definition, ingestion, and query evaluation.
#[derive(Debug, Error)]
pub enum RelStoreError {
    #[error("relation `{0}` is already defined")]
    DuplicateRelation(String),
    #[error("relation `{0}` must have at least one column")]
    EmptyColumns(String),
    #[error("relation `{rel}`: duplicate column name `{col}`")]
    DuplicateColumn { rel: String, col: String },
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("relation `{rel}` has no column `{col}`")]
    UnknownColumn { rel: String, col: String },
    #[error("relation `{rel}`: expected {expected} values, got {got}")]
    RowArity {
        rel: String,
        expected: usize,
        got: usize,
    },
    #[error("relation `{rel}` column `{col}`: value `{value}` does not have type {ty}")]
    RowType {
        rel: String,
        col: String,
        value: String,
        ty: ColumnType,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    LineArity {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, field {field}: invalid escape sequence")]
    InvalidEscape { line: usize, field: usize },
    #[error("line {line}, field {field}: cannot parse `{text}` as {ty}")]
    ValueParse {
        line: usize,
        field: usize,
        text: String,
        ty: ColumnType,
    },
    #[error("query uses duplicate alias `{0}`")]
    DuplicateAlias(String),
    #[error("query references unknown alias `{0}`")]
    UnknownAlias(String),
    #[error("predicate on `{lhs}` compares {lhs_ty} with {rhs_ty}")]
    PredicateTypes {
        lhs: String,
        lhs_ty: ColumnType,
        rhs_ty: ColumnType,
    },
    #[error("ordering comparison on json column `{0}` (json is opaque: equality only)")]
    JsonOrdering(String),
    #[error("query has an empty from list")]
    EmptyFrom,
    #[error("query has an empty select list")]
    EmptySelect,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The in-memory relational store.
#[derive(Debug, Clone, Default)]
pub struct Store {
    relations: IndexMap<String, Relation>,
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    /// Defines an empty relation. Errors on duplicate names, empty column
    /// lists, and duplicate column names.
    pub fn define_relation(&mut self, schema: Schema) -> Result<(), RelStoreError> {
        if self.relations.contains_key(&schema.name) {
            return Err(RelStoreError::DuplicateRelation(schema.name));
        }
        if schema.columns.is_empty() {
            return Err(RelStoreError::EmptyColumns(schema.name));
        }
        for (i, col) in schema.columns.iter().enumerate() {
            if schema.columns[..i].iter().any(|c| c.name == col.name) {
                return Err(RelStoreError::DuplicateColumn {
                    rel: schema.name,
                    col: col.name.clone(),
                });
            }
        }
        let name = schema.name.clone();
        self.relations.insert(
            name,
            Relation {
                schema,
                rows: Vec::new(),
            },
        );
        Ok(())
    }

    pub fn relation(&self, name: &str) -> Result<&Relation, RelStoreError> {
        self.relations
            .get(name)
            .ok_or_else(|| RelStoreError::UnknownRelation(name.to_string()))
    }

    pub fn relation_names(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(|s| s.as_str())
    }

    /// Appends one typed row, validating arity and column types.
    pub fn append_row(&mut self, name: &str, row: Tuple) -> Result<(), RelStoreError> {
        let rel = self
            .relations
            .get_mut(name)
            .ok_or_else(|| RelStoreError::UnknownRelation(name.to_string()))?;
        check_row(&rel.schema, &row)?;
        rel.rows.push(row);
        Ok(())
    }

    /// Appends a batch of rows; the relation is untouched if any row is invalid.
    pub fn append_rows(&mut self, name: &str, rows: Vec<Tuple>) -> Result<(), RelStoreError> {
        let rel = self
            .relations
            .get_mut(name)
            .ok_or_else(|| RelStoreError::UnknownRelation(name.to_string()))?;
        for row in &rows {
            check_row(&rel.schema, row)?;
        }
        rel.rows.extend(rows);
        Ok(())
    }

    /// Removes all rows from a relation, keeping its schema.
    pub fn truncate_relation(&mut self, name: &str) -> Result<(), RelStoreError> {
        let rel = self
            .relations
            .get_mut(name)
            .ok_or_else(|| RelStoreError::UnknownRelation(name.to_string()))?;
        rel.rows.clear();
        Ok(())
    }

    /// Parses a UTF-8 TSV byte stream and appends its rows in order.
    /// Returns the number of rows appended. Nothing is appended on error.
    pub fn load_tsv(&mut self, name: &str, reader: impl Read) -> Result<usize, RelStoreError> {
        let schema = self.relation(name)?.schema.clone();
        let rows = tsv::parse_stream(&schema, reader)?;
        let count = rows.len();
        self.relations.get_mut(name).unwrap().rows.extend(rows);
        Ok(count)
    }

    /// Writes the relation contents in the bit-exact TSV format.
    pub fn dump_tsv(&self, name: &str, mut writer: impl Write) -> Result<(), RelStoreError> {
        let rel = self.relation(name)?;
        for row in &rel.rows {
            tsv::write_row(&mut writer, &row.0)?;
        }
        Ok(())
    }

    /// Evaluates a conjunctive query. Results use bag semantics (set if
    /// `distinct`) and are sorted lexicographically by projected values.
    pub fn eval_query(&self, q: &ConjunctiveQuery) -> Result<QueryResult, RelStoreError> {
        query::eval(self, q)
    }
}

fn check_row(schema: &Schema, row: &Tuple) -> Result<(), RelStoreError> {
    if row.arity() != schema.arity() {
        return Err(RelStoreError::RowArity {
            rel: schema.name.clone(),
            expected: schema.arity(),
            got: row.arity(),
        });
    }
    for (col, value) in schema.columns.iter().zip(&row.0) {
        if !value.matches(col.ty) {
            return Err(RelStoreError::RowType {
                rel: schema.name.clone(),
                col: col.name.clone(),
                value: format_value(value),
                ty: col.ty,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
