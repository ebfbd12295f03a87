//! Distant-supervision labeling and train/test/error-analysis holdout splits.
//!
//! Label rules are conjunctive queries whose projections name candidate keys
//! in a variable relation; each rule carries a polarity. Keys that receive
//! both polarities across rules become `abstain`; conflicting heuristics
//! signal unreliable keys, and abstain keeps them out of the gradient.
//! Labels live outside the factor graph as evidence and targets; they are
//! never variables themselves.

use crate::grounding::{CandidateKey, VariableCatalog};
use crate::relstore::{
    escape_field, parse_field, unescape_field, ConjunctiveQuery, RelStoreError, Store,
    Value,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A distant-supervision rule: the query's projection identifies candidate
/// keys in `variable_relation`, which all receive the rule's polarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub name: String,
    pub variable_relation: String,
    pub polarity: Polarity,
    pub query: ConjunctiveQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    True,
    False,
    Abstain,
}

impl Label {
    fn of(p: Polarity) -> Label {
        match p {
            Polarity::Positive => Label::True,
            Polarity::Negative => Label::False,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::True => "true",
            Label::False => "false",
            Label::Abstain => "abstain",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelEntry {
    pub label: Label,
    /// Names of the rules that touched this key, sorted and deduplicated so
    /// the table is invariant under rule application order.
    pub provenance: Vec<String>,
}

/// Accumulated labels: one entry per candidate key.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelTable {
    entries: BTreeMap<CandidateKey, LabelEntry>,
}

#[derive(Debug, Error)]
pub enum SupervisionError {
    #[error("label rule `{rule}` targets undeclared variable relation `{relation}`")]
    UndeclaredVariableRelation { rule: String, relation: String },
    #[error("label rule `{rule}`: projection arity {got} does not match key arity {expected} of `{relation}`")]
    ProjectionArity {
        rule: String,
        relation: String,
        expected: usize,
        got: usize,
    },
    #[error("holdout fractions must be nonnegative, got {0}")]
    NegativeFraction(f64),
    #[error("holdout fractions must sum to 1, got {0}")]
    FractionSum(f64),
    #[error("label dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Store(#[from] RelStoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label_of(&self, key: &CandidateKey) -> Option<Label> {
        self.entries.get(key).map(|e| e.label)
    }

    pub fn entry(&self, key: &CandidateKey) -> Option<&LabelEntry> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CandidateKey, &LabelEntry)> {
        self.entries.iter()
    }

    /// Inserts or merges one labeled key. Conflicting polarities collapse to
    /// abstain; provenance stays sorted and deduplicated.
    pub fn insert(&mut self, key: CandidateKey, label: Label, source: &str) {
        let entry = self.entries.entry(key).or_insert(LabelEntry {
            label,
            provenance: Vec::new(),
        });
        entry.label = match (entry.label, label) {
            (a, b) if a == b => a,
            (Label::Abstain, _) | (_, Label::Abstain) => Label::Abstain,
            _ => Label::Abstain, // true vs false conflict
        };
        if let Err(pos) = entry.provenance.binary_search_by(|p| p.as_str().cmp(source)) {
            entry.provenance.insert(pos, source.to_string());
        }
    }

    /// Dumps as TSV: relation, key fields…, label, semicolon-joined provenance.
    pub fn dump_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        for (key, entry) in &self.entries {
            let mut fields = vec![escape_field(&key.relation)];
            fields.extend(key.values.iter().map(crate::relstore::format_value));
            fields.push(entry.label.as_str().to_string());
            fields.push(escape_field(&entry.provenance.join(";")));
            writeln!(w, "{}", fields.join("\t"))?;
        }
        Ok(())
    }

    /// Reads a table back from [`LabelTable::dump_tsv`] output, typing key
    /// values via the catalog.
    pub fn load_tsv(
        catalog: &VariableCatalog,
        reader: impl BufRead,
    ) -> Result<LabelTable, SupervisionError> {
        let mut table = LabelTable::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| SupervisionError::Dump(format!("line {}: {msg}", lineno + 1));
            if fields.len() < 3 {
                return Err(bad("too few fields"));
            }
            let relation =
                unescape_field(fields[0]).ok_or_else(|| bad("bad relation field"))?;
            let key_types = catalog.key_types(&relation).ok_or_else(|| {
                SupervisionError::Dump(format!("undeclared variable relation `{relation}`"))
            })?;
            if fields.len() != key_types.len() + 3 {
                return Err(bad("field count does not match key arity"));
            }
            let values: Vec<Value> = fields[1..1 + key_types.len()]
                .iter()
                .zip(key_types)
                .map(|(raw, &ty)| parse_field(raw, ty).map_err(|_| bad("bad key value")))
                .collect::<Result<_, _>>()?;
            let label = match fields[key_types.len() + 1] {
                "true" => Label::True,
                "false" => Label::False,
                "abstain" => Label::Abstain,
                other => return Err(bad(&format!("bad label `{other}`"))),
            };
            let provenance = unescape_field(fields[key_types.len() + 2])
                .ok_or_else(|| bad("bad provenance field"))?;
            let key = CandidateKey::new(relation, values);
            let entry = LabelEntry {
                label,
                provenance: if provenance.is_empty() {
                    Vec::new()
                } else {
                    provenance.split(';').map(str::to_string).collect()
                },
            };
            table.entries.insert(key, entry);
        }
        Ok(table)
    }
}

/// Applies one label rule: every projected key receives the rule's polarity,
/// with conflicts collapsing to abstain.
pub fn apply_label_rule(
    store: &Store,
    catalog: &VariableCatalog,
    rule: &LabelRule,
    labels: &mut LabelTable,
) -> Result<(), SupervisionError> {
    let key_arity = catalog.key_arity(&rule.variable_relation).ok_or_else(|| {
        SupervisionError::UndeclaredVariableRelation {
            rule: rule.name.clone(),
            relation: rule.variable_relation.clone(),
        }
    })?;
    if rule.query.select.len() != key_arity {
        return Err(SupervisionError::ProjectionArity {
            rule: rule.name.clone(),
            relation: rule.variable_relation.clone(),
            expected: key_arity,
            got: rule.query.select.len(),
        });
    }
    let result = store.eval_query(&rule.query)?;
    for row in result.rows {
        let key = CandidateKey::new(rule.variable_relation.clone(), row.0);
        labels.insert(key, Label::of(rule.polarity), &rule.name);
    }
    Ok(())
}

/// The three holdout splits. Developers train on `Train`, validate scores on
/// `Test`, and are only allowed to inspect examples in `ErrorAnalysis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    ErrorAnalysis,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::ErrorAnalysis => "error_analysis",
        }
    }
}

/// A pure function of (key, seed, fractions): which split each labeled key
/// belongs to. Abstained keys are excluded entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutAssignment {
    assignments: BTreeMap<CandidateKey, Split>,
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl HoldoutAssignment {
    /// Builds an assignment from explicit per-key splits (e.g. user-curated
    /// holdouts); [`split_holdout`] is the hashed route.
    pub fn from_assignments(
        assignments: BTreeMap<CandidateKey, Split>,
        fractions: [f64; 3],
        seed: u64,
    ) -> Self {
        HoldoutAssignment {
            assignments,
            fractions,
            seed,
        }
    }

    pub fn split_of(&self, key: &CandidateKey) -> Option<Split> {
        self.assignments.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CandidateKey, Split)> {
        self.assignments.iter().map(|(k, &s)| (k, s))
    }

    pub fn keys_in(&self, split: Split) -> impl Iterator<Item = &CandidateKey> {
        self.assignments
            .iter()
            .filter(move |(_, &s)| s == split)
            .map(|(k, _)| k)
    }

    pub fn count(&self, split: Split) -> usize {
        self.keys_in(split).count()
    }

    /// Dumps as TSV: relation, key fields…, split.
    pub fn dump_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        for (key, split) in &self.assignments {
            let mut fields = vec![escape_field(&key.relation)];
            fields.extend(key.values.iter().map(crate::relstore::format_value));
            fields.push(split.as_str().to_string());
            writeln!(w, "{}", fields.join("\t"))?;
        }
        Ok(())
    }

    pub fn load_tsv(
        catalog: &VariableCatalog,
        reader: impl BufRead,
        fractions: [f64; 3],
        seed: u64,
    ) -> Result<HoldoutAssignment, SupervisionError> {
        let mut assignments = BTreeMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| SupervisionError::Dump(format!("line {}: {msg}", lineno + 1));
            if fields.len() < 2 {
                return Err(bad("too few fields"));
            }
            let relation = unescape_field(fields[0]).ok_or_else(|| bad("bad relation field"))?;
            let key_types = catalog.key_types(&relation).ok_or_else(|| {
                SupervisionError::Dump(format!("undeclared variable relation `{relation}`"))
            })?;
            if fields.len() != key_types.len() + 2 {
                return Err(bad("field count does not match key arity"));
            }
            let values: Vec<Value> = fields[1..1 + key_types.len()]
                .iter()
                .zip(key_types)
                .map(|(raw, &ty)| parse_field(raw, ty).map_err(|_| bad("bad key value")))
                .collect::<Result<_, _>>()?;
            let split = match *fields.last().unwrap() {
                "train" => Split::Train,
                "test" => Split::Test,
                "error_analysis" => Split::ErrorAnalysis,
                other => return Err(bad(&format!("bad split `{other}`"))),
            };
            assignments.insert(CandidateKey::new(relation, values), split);
        }
        Ok(HoldoutAssignment {
            assignments,
            fractions,
            seed,
        })
    }
}

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET_BASIS;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// The exact byte string hashed for holdout assignment: the canonical TSV
/// serialization of (relation, key values…) with the decimal seed appended.
pub fn holdout_hash_input(key: &CandidateKey, seed: u64) -> String {
    let mut fields = vec![escape_field(&key.relation)];
    fields.extend(key.values.iter().map(crate::relstore::format_value));
    format!("{}{}", fields.join("\t"), seed)
}

/// Maps one key to [0, 1) reproducibly.
pub fn holdout_unit(key: &CandidateKey, seed: u64) -> f64 {
    fnv1a64(holdout_hash_input(key, seed).as_bytes()) as f64 / 2f64.powi(64)
}

/// Partitions the non-abstain labeled keys into train/test/error-analysis by
/// hashing each key to [0, 1) and thresholding at cumulative fractions.
pub fn split_holdout(
    labels: &LabelTable,
    fractions: [f64; 3],
    seed: u64,
) -> Result<HoldoutAssignment, SupervisionError> {
    for &f in &fractions {
        if f < 0.0 {
            return Err(SupervisionError::NegativeFraction(f));
        }
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SupervisionError::FractionSum(sum));
    }
    let mut assignments = BTreeMap::new();
    for (key, entry) in labels.iter() {
        if entry.label == Label::Abstain {
            continue;
        }
        let u = holdout_unit(key, seed);
        let split = if u < fractions[0] {
            Split::Train
        } else if u < fractions[0] + fractions[1] {
            Split::Test
        } else {
            Split::ErrorAnalysis
        };
        assignments.insert(key.clone(), split);
    }
    Ok(HoldoutAssignment {
        assignments,
        fractions,
        seed,
    })
}
