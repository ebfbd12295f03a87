//! Declares variable relations (tuple ↔ Boolean random variable) and compiles
//! weighted inference rules into a factor graph.
//!
//! The model over variables `x` is `P(x) ∝ exp(Σ_f w_f · g_f(x))` where each
//! factor `f` applies a logical function `g` to the variables bound by one
//! result row of its rule's query, and `w_f` is the factor's (possibly
//! learnable, possibly tied) weight. Under this semantics the weight of an
//! isolated single-variable factor is exactly the log odds of that variable.
//!
//! Grounding is deterministic: the same store and rules produce a
//! bit-identical graph, including variable indices and weight ids.

use crate::relstore::{
    escape_field, format_value, ColumnType, ConjunctiveQuery, RelStoreError, Store, Value,
};
use crate::supervision::{HoldoutAssignment, Label, LabelTable, Split};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use thiserror::Error;

/// Identifies one candidate fact: a variable relation plus its key values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidateKey {
    pub relation: String,
    pub values: Vec<Value>,
}

impl CandidateKey {
    pub fn new(relation: impl Into<String>, values: Vec<Value>) -> Self {
        CandidateKey {
            relation: relation.into(),
            values,
        }
    }

    /// Human-readable `relation(v1, v2, …)` rendering used in errors and reports.
    pub fn display(&self) -> String {
        let vals: Vec<String> = self.values.iter().map(format_value).collect();
        format!("{}({})", self.relation, vals.join(", "))
    }
}

/// A relation whose tuples each correspond to one Boolean random variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableRelation {
    pub relation: String,
    pub key_columns: Vec<String>,
}

#[derive(Debug, Clone)]
struct DeclaredRelation {
    decl: VariableRelation,
    key_types: Vec<ColumnType>,
}

/// One random variable: its candidate key, with a dense index given by
/// position in [`VariableCatalog::variables`].
#[derive(Debug, Clone, PartialEq)]
pub struct VariableInfo {
    pub relation: String,
    pub key: Vec<Value>,
}

/// The set of declared variable relations and their dense variable indices.
///
/// Variables are created only here, never implicitly by rules; within one
/// relation indices follow sorted key order, and relations are numbered in
/// declaration order.
#[derive(Debug, Clone, Default)]
pub struct VariableCatalog {
    relations: IndexMap<String, DeclaredRelation>,
    variables: Vec<VariableInfo>,
    by_key: HashMap<CandidateKey, usize>,
}

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("variable relation `{0}` is already declared")]
    DuplicateVariableRelation(String),
    #[error("variable relation `{relation}`: duplicate key {key}")]
    DuplicateKey { relation: String, key: String },
    #[error("rule `{rule}` references undeclared variable relation `{relation}`")]
    UndeclaredVariableRelation { rule: String, relation: String },
    #[error("rule `{rule}`: {function} expects {expected}, but the rule binds {got} variables")]
    FunctionArity {
        rule: String,
        function: String,
        expected: String,
        got: usize,
    },
    #[error("rule `{rule}`: query projects {got} columns but the variable keys need {needed}")]
    ProjectionLayout {
        rule: String,
        got: usize,
        needed: usize,
    },
    #[error(
        "rule `{rule}`: projected column {position} has type {got}, key column expects {expected}"
    )]
    KeyType {
        rule: String,
        position: usize,
        got: ColumnType,
        expected: ColumnType,
    },
    #[error("rule `{rule}`: weight is fixed but the query projects {extra} tie-key columns")]
    FixedWeightTieKey { rule: String, extra: usize },
    #[error("rule `{rule}`: no declared variable for candidate {key}")]
    UnknownCandidate { rule: String, key: String },
    #[error("graph dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Store(#[from] RelStoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VariableCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a variable relation, assigning each existing tuple a dense
    /// variable index in sorted key order. Duplicate keys are rejected.
    pub fn declare_variable_relation(
        &mut self,
        store: &Store,
        relation: &str,
        key_columns: Vec<String>,
    ) -> Result<&VariableRelation, GroundingError> {
        if self.relations.contains_key(relation) {
            return Err(GroundingError::DuplicateVariableRelation(
                relation.to_string(),
            ));
        }
        let rel = store.relation(relation)?;
        let mut key_idx = Vec::with_capacity(key_columns.len());
        let mut key_types = Vec::with_capacity(key_columns.len());
        for col in &key_columns {
            let idx =
                rel.schema
                    .column_index(col)
                    .ok_or_else(|| RelStoreError::UnknownColumn {
                        rel: relation.to_string(),
                        col: col.clone(),
                    })?;
            key_idx.push(idx);
            key_types.push(rel.schema.columns[idx].ty);
        }

        let mut keys: Vec<Vec<Value>> = rel
            .rows
            .iter()
            .map(|row| key_idx.iter().map(|&i| row.0[i].clone()).collect())
            .collect();
        keys.sort();
        for pair in keys.windows(2) {
            if pair[0] == pair[1] {
                return Err(GroundingError::DuplicateKey {
                    relation: relation.to_string(),
                    key: CandidateKey::new(relation, pair[0].clone()).display(),
                });
            }
        }

        for key in keys {
            let index = self.variables.len();
            self.by_key
                .insert(CandidateKey::new(relation, key.clone()), index);
            self.variables.push(VariableInfo {
                relation: relation.to_string(),
                key,
            });
        }
        let entry = DeclaredRelation {
            decl: VariableRelation {
                relation: relation.to_string(),
                key_columns,
            },
            key_types,
        };
        self.relations.insert(relation.to_string(), entry);
        Ok(&self.relations[relation].decl)
    }

    pub fn is_declared(&self, relation: &str) -> bool {
        self.relations.contains_key(relation)
    }

    pub fn key_columns(&self, relation: &str) -> Option<&[String]> {
        self.relations
            .get(relation)
            .map(|d| d.decl.key_columns.as_slice())
    }

    pub fn key_types(&self, relation: &str) -> Option<&[ColumnType]> {
        self.relations.get(relation).map(|d| d.key_types.as_slice())
    }

    pub fn key_arity(&self, relation: &str) -> Option<usize> {
        self.key_types(relation).map(|t| t.len())
    }

    pub fn variables(&self) -> &[VariableInfo] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn index_of(&self, key: &CandidateKey) -> Option<usize> {
        self.by_key.get(key).copied()
    }
}

/// The logical factor functions, each mapping {0,1}^k → {0,1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorFunction {
    /// arity 1: the variable itself
    #[serde(rename = "istrue")]
    IsTrue,
    /// arity ≥ 2: all true
    And,
    /// arity ≥ 2: any true
    Or,
    /// arity ≥ 2, arguments are (body…, head): false only when the whole
    /// body is true and the head is false
    Imply,
    /// arity 2: both equal
    Equal,
}

impl FactorFunction {
    pub fn eval(self, args: &[bool]) -> bool {
        match self {
            FactorFunction::IsTrue => args[0],
            FactorFunction::And => args.iter().all(|&x| x),
            FactorFunction::Or => args.iter().any(|&x| x),
            FactorFunction::Imply => {
                let (head, body) = args.split_last().expect("imply needs arguments");
                !(body.iter().all(|&x| x) && !head)
            }
            FactorFunction::Equal => args[0] == args[1],
        }
    }

    pub fn arity_ok(self, k: usize) -> bool {
        match self {
            FactorFunction::IsTrue => k == 1,
            FactorFunction::And | FactorFunction::Or | FactorFunction::Imply => k >= 2,
            FactorFunction::Equal => k == 2,
        }
    }

    fn expected_arity(self) -> &'static str {
        match self {
            FactorFunction::IsTrue => "exactly 1 variable",
            FactorFunction::Equal => "exactly 2 variables",
            _ => "at least 2 variables",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorFunction::IsTrue => "istrue",
            FactorFunction::And => "and",
            FactorFunction::Or => "or",
            FactorFunction::Imply => "imply",
            FactorFunction::Equal => "equal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "istrue" => FactorFunction::IsTrue,
            "and" => FactorFunction::And,
            "or" => FactorFunction::Or,
            "imply" => FactorFunction::Imply,
            "equal" => FactorFunction::Equal,
            _ => return None,
        })
    }
}

/// Fixed weights never move during learning; learnable weights start at
/// `initial` (0 unless the rule says otherwise) and are tied across factors
/// sharing the same (rule, tie-key).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSpec {
    Fixed(f64),
    Learnable {
        #[serde(default)]
        initial: f64,
    },
}

/// A weighted logical rule.
///
/// The query's projection is consumed positionally: first the key columns of
/// each bound variable relation in `vars` order, then any remaining columns
/// as the weight-tying key (learnable weights only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRule {
    pub name: String,
    pub query: ConjunctiveQuery,
    pub vars: Vec<String>,
    pub function: FactorFunction,
    pub weight: WeightSpec,
}

/// One Boolean random variable in a grounded graph. `evidence` carries the
/// train-split label, if any; it clamps the variable during learning only.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphVariable {
    pub relation: String,
    pub key: Vec<Value>,
    pub evidence: Option<bool>,
}

impl GraphVariable {
    pub fn candidate_key(&self) -> CandidateKey {
        CandidateKey::new(self.relation.clone(), self.key.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphFactor {
    pub function: FactorFunction,
    pub weight: usize,
    pub vars: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphWeight {
    pub value: f64,
    pub fixed: bool,
    pub rule: String,
    pub tie_key: Vec<Value>,
}

impl GraphWeight {
    /// Stable label for reports: the rule name, plus the tie key when present.
    pub fn label(&self) -> String {
        if self.tie_key.is_empty() {
            self.rule.clone()
        } else {
            let tie: Vec<String> = self.tie_key.iter().map(format_value).collect();
            format!("{}({})", self.rule, tie.join(", "))
        }
    }
}

/// A grounded factor graph: the immutable object inference and learning
/// operate on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactorGraph {
    pub variables: Vec<GraphVariable>,
    pub factors: Vec<GraphFactor>,
    pub weights: Vec<GraphWeight>,
}

/// Compiles rules against declared variables into a factor graph: one factor
/// per rule-query result row, learnable weights deduplicated by
/// (rule, tie-key), and evidence attached from the train split only.
pub fn ground(
    store: &Store,
    catalog: &VariableCatalog,
    rules: &[InferenceRule],
    labels: Option<&LabelTable>,
    holdout: Option<&HoldoutAssignment>,
) -> Result<FactorGraph, GroundingError> {
    let mut variables: Vec<GraphVariable> = catalog
        .variables()
        .iter()
        .map(|v| GraphVariable {
            relation: v.relation.clone(),
            key: v.key.clone(),
            evidence: None,
        })
        .collect();

    if let (Some(labels), Some(holdout)) = (labels, holdout) {
        for var in variables.iter_mut() {
            let key = CandidateKey::new(var.relation.clone(), var.key.clone());
            if holdout.split_of(&key) != Some(Split::Train) {
                continue;
            }
            var.evidence = match labels.label_of(&key) {
                Some(Label::True) => Some(true),
                Some(Label::False) => Some(false),
                _ => None,
            };
        }
    }

    let mut weights: Vec<GraphWeight> = Vec::new();
    let mut factors: Vec<GraphFactor> = Vec::new();
    // learnable weight ids by (rule index, tie key); fixed ids per rule
    let mut learnable_ids: HashMap<(usize, Vec<Value>), usize> = HashMap::new();
    let mut fixed_ids: HashMap<usize, usize> = HashMap::new();

    for (rule_idx, rule) in rules.iter().enumerate() {
        let mut key_arities = Vec::with_capacity(rule.vars.len());
        for rel in &rule.vars {
            let arity = catalog.key_arity(rel).ok_or_else(|| {
                GroundingError::UndeclaredVariableRelation {
                    rule: rule.name.clone(),
                    relation: rel.clone(),
                }
            })?;
            key_arities.push(arity);
        }
        if !rule.function.arity_ok(rule.vars.len()) {
            return Err(GroundingError::FunctionArity {
                rule: rule.name.clone(),
                function: rule.function.name().to_string(),
                expected: rule.function.expected_arity().to_string(),
                got: rule.vars.len(),
            });
        }

        let result = store.eval_query(&rule.query)?;
        let needed: usize = key_arities.iter().sum();
        if result.columns.len() < needed {
            return Err(GroundingError::ProjectionLayout {
                rule: rule.name.clone(),
                got: result.columns.len(),
                needed,
            });
        }
        let tie_cols = result.columns.len() - needed;
        if tie_cols > 0 && matches!(rule.weight, WeightSpec::Fixed(_)) {
            return Err(GroundingError::FixedWeightTieKey {
                rule: rule.name.clone(),
                extra: tie_cols,
            });
        }
        // projected key columns must match the declared key column types
        let mut pos = 0usize;
        for rel in &rule.vars {
            for &expected in catalog.key_types(rel).unwrap() {
                let got = result.columns[pos].1;
                if got != expected {
                    return Err(GroundingError::KeyType {
                        rule: rule.name.clone(),
                        position: pos + 1,
                        got,
                        expected,
                    });
                }
                pos += 1;
            }
        }

        for row in &result.rows {
            let mut var_indices = Vec::with_capacity(rule.vars.len());
            let mut offset = 0usize;
            for (rel, &arity) in rule.vars.iter().zip(&key_arities) {
                let key_values = row.0[offset..offset + arity].to_vec();
                offset += arity;
                let key = CandidateKey::new(rel.clone(), key_values);
                let idx = catalog.index_of(&key).ok_or_else(|| {
                    GroundingError::UnknownCandidate {
                        rule: rule.name.clone(),
                        key: key.display(),
                    }
                })?;
                var_indices.push(idx);
            }
            let tie_key: Vec<Value> = row.0[offset..].to_vec();

            let weight_id = match &rule.weight {
                WeightSpec::Fixed(value) => *fixed_ids.entry(rule_idx).or_insert_with(|| {
                    weights.push(GraphWeight {
                        value: *value,
                        fixed: true,
                        rule: rule.name.clone(),
                        tie_key: Vec::new(),
                    });
                    weights.len() - 1
                }),
                WeightSpec::Learnable { initial } => *learnable_ids
                    .entry((rule_idx, tie_key.clone()))
                    .or_insert_with(|| {
                        weights.push(GraphWeight {
                            value: *initial,
                            fixed: false,
                            rule: rule.name.clone(),
                            tie_key,
                        });
                        weights.len() - 1
                    }),
            };
            factors.push(GraphFactor {
                function: rule.function,
                weight: weight_id,
                vars: var_indices,
            });
        }
    }

    Ok(FactorGraph {
        variables,
        factors,
        weights,
    })
}

impl FactorGraph {
    /// Factor indices adjacent to each variable.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.variables.len()];
        for (fi, f) in self.factors.iter().enumerate() {
            for &v in &f.vars {
                adj[v].push(fi);
            }
        }
        adj
    }

    pub fn free_variable_count(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.evidence.is_none())
            .count()
    }

    /// A copy with all evidence removed: every variable free. Final
    /// inference runs on this so held-out marginals are honest predictions.
    pub fn clear_evidence(&self) -> FactorGraph {
        let mut g = self.clone();
        for v in &mut g.variables {
            v.evidence = None;
        }
        g
    }

    /// A copy with replacement weight values (length must match).
    pub fn with_weight_values(&self, values: &[f64]) -> FactorGraph {
        assert_eq!(values.len(), self.weights.len(), "weight table size");
        let mut g = self.clone();
        for (w, &v) in g.weights.iter_mut().zip(values) {
            w.value = v;
        }
        g
    }

    /// Connected components over the factor structure, each a sorted list of
    /// variable indices. Isolated variables form singleton components.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let n = self.variables.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.factors {
            if let Some((&first, rest)) = f.vars.split_first() {
                let root = find(&mut parent, first);
                for &v in rest {
                    let r = find(&mut parent, v);
                    parent[r] = root;
                }
            }
        }
        let mut groups: IndexMap<usize, Vec<usize>> = IndexMap::new();
        for v in 0..n {
            let root = find(&mut parent, v);
            groups.entry(root).or_default().push(v);
        }
        groups.into_values().collect()
    }

    /// Restricts the graph to `var_indices` (which must be closed under
    /// factor membership, e.g. a connected component). The weight table is
    /// kept whole so weight ids stay valid.
    pub fn subgraph(&self, var_indices: &[usize]) -> FactorGraph {
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut variables = Vec::with_capacity(var_indices.len());
        for (new_idx, &old_idx) in var_indices.iter().enumerate() {
            remap.insert(old_idx, new_idx);
            variables.push(self.variables[old_idx].clone());
        }
        let factors = self
            .factors
            .iter()
            .filter(|f| f.vars.iter().all(|v| remap.contains_key(v)))
            .map(|f| GraphFactor {
                function: f.function,
                weight: f.weight,
                vars: f.vars.iter().map(|v| remap[v]).collect(),
            })
            .collect();
        FactorGraph {
            variables,
            factors,
            weights: self.weights.clone(),
        }
    }

    /// Writes `variables.tsv`: index, relation, key…, evidence.
    pub fn dump_variables(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, v) in self.variables.iter().enumerate() {
            let mut fields = vec![i.to_string(), escape_field(&v.relation)];
            fields.extend(v.key.iter().map(format_value));
            fields.push(match v.evidence {
                Some(true) => "true".into(),
                Some(false) => "false".into(),
                None => "\\N".into(),
            });
            writeln!(w, "{}", fields.join("\t"))?;
        }
        Ok(())
    }

    /// Writes `factors.tsv`: factor-id, kind, weight-id, comma-joined
    /// variable indices.
    pub fn dump_factors(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, f) in self.factors.iter().enumerate() {
            let vars: Vec<String> = f.vars.iter().map(|v| v.to_string()).collect();
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                i,
                f.function.name(),
                f.weight,
                vars.join(",")
            )?;
        }
        Ok(())
    }

    /// Writes `weights.tsv`: weight-id, fixed?, value, rule, tie_key….
    pub fn dump_weights(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, wt) in self.weights.iter().enumerate() {
            let mut fields = vec![
                i.to_string(),
                wt.fixed.to_string(),
                wt.value.to_string(),
                escape_field(&wt.rule),
            ];
            fields.extend(wt.tie_key.iter().map(format_value));
            writeln!(w, "{}", fields.join("\t"))?;
        }
        Ok(())
    }

    /// Reads a graph back from its three dumps. Variable keys are typed via
    /// the catalog; tie-key values are reloaded as text.
    pub fn load(
        catalog: &VariableCatalog,
        variables: impl BufRead,
        factors: impl BufRead,
        weights: impl BufRead,
    ) -> Result<FactorGraph, GroundingError> {
        use crate::relstore::{parse_field, unescape_field};
        let bad = GroundingError::Dump;

        let mut graph = FactorGraph::default();
        for (lineno, line) in variables.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 {
                return Err(bad(format!(
                    "variables.tsv line {}: too few fields",
                    lineno + 1
                )));
            }
            let relation = unescape_field(fields[1])
                .ok_or_else(|| bad(format!("variables.tsv line {}: bad relation", lineno + 1)))?;
            let key_types = catalog
                .key_types(&relation)
                .ok_or_else(|| bad(format!("variables.tsv: undeclared relation `{relation}`")))?;
            if fields.len() != key_types.len() + 3 {
                return Err(bad(format!(
                    "variables.tsv line {}: expected {} fields",
                    lineno + 1,
                    key_types.len() + 3
                )));
            }
            let key: Vec<Value> = fields[2..2 + key_types.len()]
                .iter()
                .zip(key_types)
                .map(|(raw, &ty)| {
                    parse_field(raw, ty)
                        .map_err(|_| bad(format!("variables.tsv line {}: bad key", lineno + 1)))
                })
                .collect::<Result<_, _>>()?;
            let evidence = match *fields.last().unwrap() {
                "true" => Some(true),
                "false" => Some(false),
                "\\N" => None,
                other => return Err(bad(format!("variables.tsv: bad evidence `{other}`"))),
            };
            graph.variables.push(GraphVariable {
                relation,
                key,
                evidence,
            });
        }

        for (lineno, line) in weights.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 4 {
                return Err(bad(format!(
                    "weights.tsv line {}: too few fields",
                    lineno + 1
                )));
            }
            let fixed = fields[1] == "true";
            let value: f64 = fields[2]
                .parse()
                .map_err(|_| bad(format!("weights.tsv line {}: bad value", lineno + 1)))?;
            let rule = unescape_field(fields[3])
                .ok_or_else(|| bad(format!("weights.tsv line {}: bad rule", lineno + 1)))?;
            let tie_key: Vec<Value> = fields[4..]
                .iter()
                .map(|raw| {
                    parse_field(raw, ColumnType::Text)
                        .map_err(|_| bad(format!("weights.tsv line {}: bad tie key", lineno + 1)))
                })
                .collect::<Result<_, _>>()?;
            graph.weights.push(GraphWeight {
                value,
                fixed,
                rule,
                tie_key,
            });
        }

        for (lineno, line) in factors.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!(
                    "factors.tsv line {}: expected 4 fields",
                    lineno + 1
                )));
            }
            let function = FactorFunction::parse(fields[1])
                .ok_or_else(|| bad(format!("factors.tsv line {}: bad kind", lineno + 1)))?;
            let weight: usize = fields[2]
                .parse()
                .map_err(|_| bad(format!("factors.tsv line {}: bad weight id", lineno + 1)))?;
            let vars: Vec<usize> = fields[3]
                .split(',')
                .map(|s| s.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(format!("factors.tsv line {}: bad var list", lineno + 1)))?;
            if weight >= graph.weights.len() || vars.iter().any(|&v| v >= graph.variables.len()) {
                return Err(bad(format!(
                    "factors.tsv line {}: dangling reference",
                    lineno + 1
                )));
            }
            graph.factors.push(GraphFactor {
                function,
                weight,
                vars,
            });
        }
        Ok(graph)
    }
}
