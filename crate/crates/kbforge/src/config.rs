//! The application configuration: a single JSON document declaring
//! relations, inputs, extractors, variable relations, label rules, the
//! holdout policy, inference rules, and engine settings. Queries arrive as
//! structured objects, not SQL strings.
//!
//! [`validate`] cross-references every name in the document and returns a
//! list of findings; an empty list means the configuration is runnable.

use crate::diagnostics::DiagnosticsOptions;
use crate::engine::{LearnOptions, SamplerOptions};
use crate::grounding::{CandidateKey, InferenceRule, VariableRelation, WeightSpec};
use crate::relstore::{ConjunctiveQuery, Schema, Store};
use crate::supervision::LabelRule;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub relation: String,
    /// TSV file, resolved relative to the config file's directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub name: String,
    pub input: ConjunctiveQuery,
    /// Shell command, run with the config directory as working directory.
    pub command: String,
    pub output_relation: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Optional self-check: must equal the output relation's column names.
    #[serde(default)]
    pub output_columns: Option<Vec<String>>,
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutConfig {
    /// Train, test, error-analysis fractions; must sum to 1.
    pub fractions: [f64; 3],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    #[serde(default)]
    pub relations: Vec<Schema>,
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub extractors: Vec<ExtractorConfig>,
    #[serde(default)]
    pub variable_relations: Vec<VariableRelation>,
    #[serde(default)]
    pub label_rules: Vec<LabelRule>,
    pub holdout: HoldoutConfig,
    #[serde(default)]
    pub inference_rules: Vec<InferenceRule>,
    #[serde(default)]
    pub learn: LearnOptions,
    #[serde(default)]
    pub sampler: SamplerOptions,
    #[serde(default)]
    pub diagnostics: DiagnosticsOptions,
    /// Gold facts expected to be extracted; used by error triage.
    #[serde(default)]
    pub expected_facts: Vec<CandidateKey>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<AppConfig, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Canonical serialization used for the config hash: the parsed
    /// document re-serialized with stable field order, so formatting and
    /// key order in the source file do not matter.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// One validation finding; the context names the offending config item.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub context: String,
    pub message: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.context, self.message)
    }
}

/// Cross-references the whole document. `base_dir` anchors relative input
/// paths; pass `None` to skip file-existence checks.
pub fn validate(config: &AppConfig, base_dir: Option<&Path>) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut find = |context: &str, message: String| {
        findings.push(Finding {
            context: context.to_string(),
            message,
        })
    };

    // schema-only store: defines every relation with zero rows, which lets
    // the query evaluator do all name and type resolution
    let mut store = Store::new();
    for schema in &config.relations {
        let context = format!("relation `{}`", schema.name);
        if let Err(e) = store.define_relation(schema.clone()) {
            find(&context, e.to_string());
        }
    }

    for input in &config.inputs {
        let context = format!("input for `{}`", input.relation);
        if store.relation(&input.relation).is_err() {
            find(&context, format!("unknown relation `{}`", input.relation));
        }
        if let Some(base) = base_dir {
            let path = base.join(&input.path);
            if !path.is_file() {
                find(&context, format!("file not found: {}", path.display()));
            }
        }
    }

    let mut extractor_outputs = Vec::new();
    for (i, ex) in config.extractors.iter().enumerate() {
        let context = format!("extractor `{}`", ex.name);
        if config.extractors[..i].iter().any(|e| e.name == ex.name) {
            find(&context, "duplicate extractor name".into());
        }
        if let Err(e) = store.eval_query(&ex.input) {
            find(&context, format!("input query: {e}"));
        }
        if ex.timeout_secs <= 0.0 {
            find(&context, "timeout must be positive".into());
        }
        match store.relation(&ex.output_relation) {
            Err(_) => find(
                &context,
                format!("unknown output relation `{}`", ex.output_relation),
            ),
            Ok(rel) => {
                extractor_outputs.push(ex.output_relation.clone());
                if let Some(cols) = &ex.output_columns {
                    let declared: Vec<&str> =
                        rel.schema.columns.iter().map(|c| c.name.as_str()).collect();
                    if declared != cols.iter().map(String::as_str).collect::<Vec<_>>() {
                        find(
                            &context,
                            format!(
                                "output schema mismatch: declares [{}], relation has [{}]",
                                cols.join(", "),
                                declared.join(", ")
                            ),
                        );
                    }
                }
            }
        }
        if config.inputs.iter().any(|inp| inp.relation == ex.output_relation) {
            find(
                &context,
                format!(
                    "output relation `{}` is also an input target; extractor reruns would clobber loaded rows",
                    ex.output_relation
                ),
            );
        }
    }

    for (i, vr) in config.variable_relations.iter().enumerate() {
        let context = format!("variable relation `{}`", vr.relation);
        if config.variable_relations[..i]
            .iter()
            .any(|v| v.relation == vr.relation)
        {
            find(&context, "declared twice".into());
        }
        match store.relation(&vr.relation) {
            Err(_) => find(&context, "unknown relation".into()),
            Ok(rel) => {
                if vr.key_columns.is_empty() {
                    find(&context, "key_columns must be non-empty".into());
                }
                for col in &vr.key_columns {
                    if rel.schema.column_index(col).is_none() {
                        find(&context, format!("no column `{col}`"));
                    }
                }
            }
        }
    }
    let key_arity = |relation: &str| -> Option<usize> {
        config
            .variable_relations
            .iter()
            .find(|vr| vr.relation == relation)
            .map(|vr| vr.key_columns.len())
    };

    for (i, rule) in config.label_rules.iter().enumerate() {
        let context = format!("label rule `{}`", rule.name);
        if config.label_rules[..i].iter().any(|r| r.name == rule.name) {
            find(&context, "duplicate rule name".into());
        }
        match key_arity(&rule.variable_relation) {
            None => find(
                &context,
                format!(
                    "undeclared variable relation `{}`",
                    rule.variable_relation
                ),
            ),
            Some(arity) => {
                if rule.query.select.len() != arity {
                    find(
                        &context,
                        format!(
                            "projection arity {} does not match key arity {arity}",
                            rule.query.select.len()
                        ),
                    );
                }
            }
        }
        if let Err(e) = store.eval_query(&rule.query) {
            find(&context, format!("query: {e}"));
        }
    }

    let f = &config.holdout.fractions;
    if f.iter().any(|&x| x < 0.0) {
        find("holdout", format!("negative fraction in {f:?}"));
    } else if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        find(
            "holdout",
            format!("fractions sum to {}, expected 1", f.iter().sum::<f64>()),
        );
    }

    for (i, rule) in config.inference_rules.iter().enumerate() {
        let context = format!("inference rule `{}`", rule.name);
        if config.inference_rules[..i]
            .iter()
            .any(|r| r.name == rule.name)
        {
            find(&context, "duplicate rule name".into());
        }
        if !rule.function.arity_ok(rule.vars.len()) {
            find(
                &context,
                format!(
                    "{} cannot take {} bound variables",
                    rule.function.name(),
                    rule.vars.len()
                ),
            );
        }
        let mut needed = 0usize;
        let mut vars_ok = true;
        for rel in &rule.vars {
            match key_arity(rel) {
                Some(a) => needed += a,
                None => {
                    vars_ok = false;
                    find(&context, format!("undeclared variable relation `{rel}`"));
                }
            }
        }
        match store.eval_query(&rule.query) {
            Err(e) => find(&context, format!("query: {e}")),
            Ok(result) if vars_ok => {
                if result.columns.len() < needed {
                    find(
                        &context,
                        format!(
                            "query projects {} columns, variable keys need {needed}",
                            result.columns.len()
                        ),
                    );
                } else if result.columns.len() > needed
                    && matches!(rule.weight, WeightSpec::Fixed(_))
                {
                    find(
                        &context,
                        "fixed-weight rule projects extra tie-key columns".into(),
                    );
                }
            }
            Ok(_) => {}
        }
    }

    for fact in &config.expected_facts {
        let context = format!("expected fact {}", fact.display());
        match key_arity(&fact.relation) {
            None => find(
                &context,
                format!("undeclared variable relation `{}`", fact.relation),
            ),
            Some(arity) => {
                if fact.values.len() != arity {
                    find(
                        &context,
                        format!("key arity {} does not match {arity}", fact.values.len()),
                    );
                }
            }
        }
    }

    if config.learn.epochs == 0 || config.learn.chain_samples == 0 {
        find("learn", "epochs and chain_samples must be ≥ 1".into());
    }
    if config.learn.step_size <= 0.0 {
        find("learn", "step_size must be positive".into());
    }
    if config.learn.l2 < 0.0 || config.learn.step_decay < 0.0 {
        find("learn", "l2 and step_decay must be nonnegative".into());
    }
    if config.sampler.n_samples == 0 || config.sampler.chains == 0 {
        find("sampler", "n_samples and chains must be ≥ 1".into());
    }
    if config.diagnostics.top_k == 0 {
        find("diagnostics", "top_k must be ≥ 1".into());
    }

    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relstore::ColumnType;

    fn minimal_config() -> AppConfig {
        serde_json::from_value(serde_json::json!({
            "relations": [
                {"name": "Sentences", "columns": [
                    {"name": "doc_id", "type": "text"},
                    {"name": "sent_id", "type": "int64"},
                    {"name": "words", "type": "json"}
                ]},
                {"name": "Cand", "columns": [
                    {"name": "m1", "type": "text"},
                    {"name": "m2", "type": "text"}
                ]}
            ],
            "variable_relations": [
                {"relation": "Cand", "key_columns": ["m1", "m2"]}
            ],
            "holdout": {"fractions": [0.8, 0.1, 0.1], "seed": 7}
        }))
        .unwrap()
    }

    #[test]
    fn minimal_config_is_clean() {
        let findings = validate(&minimal_config(), None);
        assert!(findings.is_empty(), "{findings:?}");
    }

    #[test]
    fn rule_referencing_undeclared_relation_is_found() {
        let mut config = minimal_config();
        config.inference_rules.push(InferenceRule {
            name: "bad".into(),
            query: ConjunctiveQuery {
                from: vec![crate::relstore::FromItem {
                    relation: "Cand".into(),
                    alias: "c".into(),
                }],
                predicates: vec![],
                select: vec!["c.m1".parse().unwrap(), "c.m2".parse().unwrap()],
                distinct: false,
            },
            vars: vec!["Nope".into()],
            function: crate::grounding::FactorFunction::IsTrue,
            weight: WeightSpec::Fixed(1.0),
        });
        let findings = validate(&config, None);
        assert_eq!(findings.len(), 1);
        assert!(findings[0].context.contains("bad"));
        assert!(findings[0].message.contains("Nope"));
    }

    #[test]
    fn valid_fractions_produce_no_finding() {
        let mut config = minimal_config();
        config.holdout.fractions = [0.8, 0.1, 0.1];
        assert!(validate(&config, None).is_empty());
        config.holdout.fractions = [0.6, 0.3, 0.2];
        let findings = validate(&config, None);
        assert_eq!(findings.len(), 1);
        assert!(findings[0].message.contains("sum"));
    }

    #[test]
    fn extractor_output_schema_mismatch_is_found() {
        let mut config = minimal_config();
        config.extractors.push(ExtractorConfig {
            name: "ex".into(),
            input: ConjunctiveQuery {
                from: vec![crate::relstore::FromItem {
                    relation: "Sentences".into(),
                    alias: "s".into(),
                }],
                predicates: vec![],
                select: vec!["s.doc_id".parse().unwrap()],
                distinct: false,
            },
            command: "cat".into(),
            output_relation: "Cand".into(),
            timeout_secs: 10.0,
            output_columns: Some(vec!["m1".into(), "mention2".into()]),
        });
        let findings = validate(&config, None);
        assert_eq!(findings.len(), 1);
        assert!(findings[0].message.contains("output schema mismatch"));
    }

    #[test]
    fn config_round_trips_and_hash_input_is_stable() {
        let config = minimal_config();
        let json = config.canonical_json();
        let reparsed = AppConfig::from_json(&json).unwrap();
        assert_eq!(reparsed, config);
        assert_eq!(reparsed.canonical_json(), json);
    }

    #[test]
    fn queries_deserialize_from_friendly_json() {
        let q: ConjunctiveQuery = serde_json::from_value(serde_json::json!({
            "from": [{"relation": "R", "alias": "r"}],
            "where": [
                {"lhs": "r.x", "op": "=", "rhs": {"column": "r.y"}},
                {"lhs": "r.z", "op": ">=", "rhs": {"value": 3}}
            ],
            "select": ["r.x"],
            "distinct": true
        }))
        .unwrap();
        assert_eq!(q.from[0].alias, "r");
        assert_eq!(q.predicates.len(), 2);
        assert!(q.distinct);
        let _ = ColumnType::Int64;
    }
}
