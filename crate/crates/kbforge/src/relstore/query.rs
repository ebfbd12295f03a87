//! Conjunctive queries: a from-list of aliased relations, comparison
//! predicates, and a projection.
//!
//! Evaluation is a progressive-filter nested-loop join with deterministic
//! output order (lexicographic by projected values). Null never satisfies a
//! predicate, not even `null = null`; float comparisons involving NaN are
//! likewise false.

use super::{ColumnType, Relation, RelStoreError, Store, Tuple, Value};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

/// `alias.column` reference into the from-list.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub alias: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(alias: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            alias: alias.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.alias, self.column)
    }
}

impl FromStr for ColumnRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('.') {
            Some((alias, column)) if !alias.is_empty() && !column.is_empty() => {
                Ok(ColumnRef::new(alias, column))
            }
            _ => Err(format!("expected `alias.column`, got `{s}`")),
        }
    }
}

impl Serialize for ColumnRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ColumnRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Comparison operators allowed in predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

/// Right-hand side of a predicate: another column or a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Column(ColumnRef),
    Value(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub lhs: ColumnRef,
    pub op: CmpOp,
    pub rhs: Operand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FromItem {
    pub relation: String,
    pub alias: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjunctiveQuery {
    pub from: Vec<FromItem>,
    #[serde(rename = "where", default)]
    pub predicates: Vec<Predicate>,
    pub select: Vec<ColumnRef>,
    #[serde(default)]
    pub distinct: bool,
}

/// Projected rows plus their `alias.column` labels and types.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub columns: Vec<(String, ColumnType)>,
    pub rows: Vec<Tuple>,
}

// Constants are JSON scalars: null, bool, integer, float, string. A string
// constant compared against a json column is coerced to a json value during
// validation, and an integer constant against a float64 column to a float.
impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => serializer.serialize_none(),
            Value::Bool(b) => serializer.serialize_bool(*b),
            Value::Int(i) => serializer.serialize_i64(*i),
            Value::Float(f) => serializer.serialize_f64(*f),
            Value::Text(s) | Value::Json(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ValueVisitor;

        impl serde::de::Visitor<'_> for ValueVisitor {
            type Value = Value;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("null, bool, integer, float, or string")
            }

            fn visit_unit<E>(self) -> Result<Value, E> {
                Ok(Value::Null)
            }

            fn visit_none<E>(self) -> Result<Value, E> {
                Ok(Value::Null)
            }

            fn visit_bool<E>(self, v: bool) -> Result<Value, E> {
                Ok(Value::Bool(v))
            }

            fn visit_i64<E>(self, v: i64) -> Result<Value, E> {
                Ok(Value::Int(v))
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Value, E> {
                i64::try_from(v)
                    .map(Value::Int)
                    .map_err(|_| E::custom("integer out of i64 range"))
            }

            fn visit_f64<E>(self, v: f64) -> Result<Value, E> {
                Ok(Value::Float(v))
            }

            fn visit_str<E>(self, v: &str) -> Result<Value, E> {
                Ok(Value::Text(v.to_string()))
            }
        }

        deserializer.deserialize_any(ValueVisitor)
    }
}

struct ResolvedPred {
    lhs: (usize, usize),
    op: CmpOp,
    rhs: ResolvedOperand,
}

enum ResolvedOperand {
    Col(usize, usize),
    Const(Value),
}

struct Resolved<'a> {
    rels: Vec<&'a Relation>,
    // predicates indexed by the from-position at which they become evaluable
    preds_at: Vec<Vec<ResolvedPred>>,
    select: Vec<(usize, usize)>,
    columns: Vec<(String, ColumnType)>,
}

fn resolve<'a>(store: &'a Store, q: &ConjunctiveQuery) -> Result<Resolved<'a>, RelStoreError> {
    if q.from.is_empty() {
        return Err(RelStoreError::EmptyFrom);
    }
    if q.select.is_empty() {
        return Err(RelStoreError::EmptySelect);
    }
    let mut rels = Vec::with_capacity(q.from.len());
    for (i, item) in q.from.iter().enumerate() {
        if q.from[..i].iter().any(|f| f.alias == item.alias) {
            return Err(RelStoreError::DuplicateAlias(item.alias.clone()));
        }
        rels.push(store.relation(&item.relation)?);
    }

    let lookup = |r: &ColumnRef| -> Result<(usize, usize), RelStoreError> {
        let from_idx = q
            .from
            .iter()
            .position(|f| f.alias == r.alias)
            .ok_or_else(|| RelStoreError::UnknownAlias(r.alias.clone()))?;
        let col_idx = rels[from_idx]
            .schema
            .column_index(&r.column)
            .ok_or_else(|| RelStoreError::UnknownColumn {
                rel: q.from[from_idx].relation.clone(),
                col: r.column.clone(),
            })?;
        Ok((from_idx, col_idx))
    };

    let mut select = Vec::with_capacity(q.select.len());
    let mut columns = Vec::with_capacity(q.select.len());
    for r in &q.select {
        let (fi, ci) = lookup(r)?;
        select.push((fi, ci));
        columns.push((r.to_string(), rels[fi].schema.columns[ci].ty));
    }

    let mut preds_at: Vec<Vec<ResolvedPred>> = (0..q.from.len()).map(|_| Vec::new()).collect();
    for p in &q.predicates {
        let lhs = lookup(&p.lhs)?;
        let lhs_ty = rels[lhs.0].schema.columns[lhs.1].ty;
        if p.op.is_ordering() && lhs_ty == ColumnType::Json {
            return Err(RelStoreError::JsonOrdering(p.lhs.to_string()));
        }
        let (rhs, depth) = match &p.rhs {
            Operand::Column(r) => {
                let rc = lookup(r)?;
                let rhs_ty = rels[rc.0].schema.columns[rc.1].ty;
                if rhs_ty != lhs_ty {
                    return Err(RelStoreError::PredicateTypes {
                        lhs: p.lhs.to_string(),
                        lhs_ty,
                        rhs_ty,
                    });
                }
                (ResolvedOperand::Col(rc.0, rc.1), lhs.0.max(rc.0))
            }
            Operand::Value(v) => {
                let coerced = coerce_const(v, lhs_ty).ok_or_else(|| {
                    RelStoreError::PredicateTypes {
                        lhs: p.lhs.to_string(),
                        lhs_ty,
                        // unwrap is fine: Null always coerces
                        rhs_ty: v.column_type().unwrap(),
                    }
                })?;
                (ResolvedOperand::Const(coerced), lhs.0)
            }
        };
        preds_at[depth].push(ResolvedPred {
            lhs,
            op: p.op,
            rhs,
        });
    }

    Ok(Resolved {
        rels,
        preds_at,
        select,
        columns,
    })
}

fn coerce_const(v: &Value, col_ty: ColumnType) -> Option<Value> {
    match (v, col_ty) {
        (Value::Null, _) => Some(Value::Null),
        (Value::Int(i), ColumnType::Float64) => Some(Value::Float(*i as f64)),
        (Value::Text(s), ColumnType::Json) => Some(Value::Json(s.clone())),
        _ if v.matches(col_ty) => Some(v.clone()),
        _ => None,
    }
}

/// Predicate comparison semantics: null and NaN satisfy nothing.
fn compare(op: CmpOp, l: &Value, r: &Value) -> bool {
    let ord = match (l, r) {
        (Value::Null, _) | (_, Value::Null) => return false,
        (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
        (Value::Int(a), Value::Int(b)) => a.cmp(b),
        (Value::Float(a), Value::Float(b)) => match a.partial_cmp(b) {
            Some(o) => o,
            None => return false,
        },
        (Value::Text(a), Value::Text(b)) => a.cmp(b),
        (Value::Json(a), Value::Json(b)) => a.cmp(b),
        // mixed types are rejected during validation
        _ => return false,
    };
    op.holds(ord)
}

pub(super) fn eval(store: &Store, q: &ConjunctiveQuery) -> Result<QueryResult, RelStoreError> {
    let r = resolve(store, q)?;
    let mut rows = Vec::new();
    let mut binding: Vec<usize> = Vec::with_capacity(r.rels.len());
    descend(&r, &mut binding, &mut rows);
    rows.sort_unstable();
    if q.distinct {
        rows.dedup();
    }
    Ok(QueryResult {
        columns: r.columns,
        rows,
    })
}

fn descend(r: &Resolved, binding: &mut Vec<usize>, out: &mut Vec<Tuple>) {
    let depth = binding.len();
    if depth == r.rels.len() {
        let values = r
            .select
            .iter()
            .map(|&(fi, ci)| r.rels[fi].rows[binding[fi]].0[ci].clone())
            .collect();
        out.push(Tuple(values));
        return;
    }
    'rows: for row_idx in 0..r.rels[depth].rows.len() {
        binding.push(row_idx);
        for p in &r.preds_at[depth] {
            let lhs = &r.rels[p.lhs.0].rows[binding[p.lhs.0]].0[p.lhs.1];
            let rhs = match &p.rhs {
                ResolvedOperand::Col(fi, ci) => &r.rels[*fi].rows[binding[*fi]].0[*ci],
                ResolvedOperand::Const(v) => v,
            };
            if !compare(p.op, lhs, rhs) {
                binding.pop();
                continue 'rows;
            }
        }
        descend(r, binding, out);
        binding.pop();
    }
}
