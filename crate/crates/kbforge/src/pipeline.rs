//! Configuration-driven orchestration of a full run:
//! load → extract → supervise → ground → learn → infer → calibrate → errors.
//!
//! Every stage writes its artifacts into the output directory and records
//! counts and timings in `manifest.json`, which also pins the config hash
//! that produced the directory. Running a subset of stages reuses the prior
//! artifacts; mixing artifacts from different config hashes is rejected.
//!
//! Artifact layout:
//!
//! ```text
//! <output_dir>/
//!   manifest.json         config hash, seeds, per-stage counts and timings
//!   store/<relation>.tsv  relational store after load + extract
//!   labels.tsv            distant-supervision labels with provenance
//!   holdout.tsv           train/test/error-analysis assignment
//!   graph/variables.tsv   grounded factor graph (three sections)
//!   graph/factors.tsv
//!   graph/weights.tsv
//!   weights.tsv           learned weight table
//!   marginals.tsv         relation, key…, probability
//!   calibration.json      bins plus diagnostic flags
//!   errors.json           categorized error cases with evidence
//! ```

use crate::config::{validate, AppConfig, Finding};
use crate::diagnostics::{
    calibrate, diagnose_all, find_errors, render_calibration_text, render_errors_text, ErrorCase,
    LabeledPrediction, Prediction,
};
use crate::engine::{gibbs_marginals, learn_weights};
use crate::grounding::{ground, CandidateKey, FactorGraph, VariableCatalog};
use crate::relstore::{escape_field, format_value, parse_field, unescape_field, Store, Value};
use crate::supervision::{apply_label_rule, split_holdout, HoldoutAssignment, Label, LabelTable};
use crate::udf::{run_extractor, ExtractorSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Load,
    Extract,
    Supervise,
    Ground,
    Learn,
    Infer,
    Calibrate,
    Errors,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Load,
        Stage::Extract,
        Stage::Supervise,
        Stage::Ground,
        Stage::Learn,
        Stage::Infer,
        Stage::Calibrate,
        Stage::Errors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Extract => "extract",
            Stage::Supervise => "supervise",
            Stage::Ground => "ground",
            Stage::Learn => "learn",
            Stage::Infer => "infer",
            Stage::Calibrate => "calibrate",
            Stage::Errors => "errors",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration has {} validation finding(s):\n{}", .0.len(), format_findings(.0))]
    Findings(Vec<Finding>),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("no output directory: set output_dir in the config or pass --output")]
    NoOutputDir,
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("stage `{stage}` requires missing artifact `{artifact}`; run the stage that produces it first")]
    MissingDependency { stage: &'static str, artifact: String },
    #[error("artifact directory belongs to config hash {existing}, current config hashes to {current}; rerun all stages or use a fresh directory")]
    ConfigHashMismatch { existing: String, current: String },
    #[error("stage `{stage}` failed: {source}")]
    StageFailed {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_findings(findings: &[Finding]) -> String {
    findings
        .iter()
        .map(|f| format!("  - {f}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSeeds {
    pub holdout: u64,
    pub learn: u64,
    pub sampler: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub duration_ms: u64,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seeds: ManifestSeeds,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    pub calibration_text: Option<String>,
    pub errors_text: Option<String>,
}

pub fn load_config(path: &Path) -> Result<AppConfig, PipelineError> {
    let text = fs::read_to_string(path)?;
    Ok(AppConfig::from_json(&text)?)
}

/// Reads, validates, and runs a config file. `stages` of `None` means all.
pub fn run_file(
    config_path: &Path,
    output: Option<PathBuf>,
    stages: Option<&[Stage]>,
) -> Result<RunOutcome, PipelineError> {
    let config = load_config(config_path)?;
    let base_dir = config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let pipeline = Pipeline::new(config, base_dir, output)?;
    pipeline.run(stages.unwrap_or(&Stage::ALL))
}

pub fn config_hash(config: &AppConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.canonical_json().as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Pipeline {
    config: AppConfig,
    base_dir: PathBuf,
    out_dir: PathBuf,
    hash: String,
    store: Option<Store>,
    catalog: Option<VariableCatalog>,
    labels: Option<LabelTable>,
    holdout: Option<HoldoutAssignment>,
    graph: Option<FactorGraph>,
    learned: Option<Vec<f64>>,
    predictions: Option<Vec<Prediction>>,
}

impl Pipeline {
    pub fn new(
        config: AppConfig,
        base_dir: PathBuf,
        output: Option<PathBuf>,
    ) -> Result<Pipeline, PipelineError> {
        let out_dir = match output.or_else(|| config.output_dir.clone()) {
            Some(dir) if dir.is_absolute() => dir,
            Some(dir) => base_dir.join(dir),
            None => return Err(PipelineError::NoOutputDir),
        };
        let hash = config_hash(&config);
        Ok(Pipeline {
            config,
            base_dir,
            out_dir,
            hash,
            store: None,
            catalog: None,
            labels: None,
            holdout: None,
            graph: None,
            learned: None,
            predictions: None,
        })
    }

    pub fn run(mut self, stages: &[Stage]) -> Result<RunOutcome, PipelineError> {
        let findings = validate(&self.config, Some(&self.base_dir));
        if !findings.is_empty() {
            return Err(PipelineError::Findings(findings));
        }
        fs::create_dir_all(&self.out_dir)?;

        let requested: Vec<Stage> = Stage::ALL
            .into_iter()
            .filter(|s| stages.contains(s))
            .collect();
        let full_run = requested.len() == Stage::ALL.len();

        let mut manifest = match self.read_manifest()? {
            Some(m) if m.config_hash != self.hash => {
                if full_run {
                    self.fresh_manifest()
                } else {
                    return Err(PipelineError::ConfigHashMismatch {
                        existing: m.config_hash,
                        current: self.hash.clone(),
                    });
                }
            }
            Some(m) => m,
            None => self.fresh_manifest(),
        };

        let mut calibration_text = None;
        let mut errors_text = None;
        for stage in requested {
            let started = Instant::now();
            let result = match stage {
                Stage::Load => self.stage_load(),
                Stage::Extract => self.stage_extract(),
                Stage::Supervise => self.stage_supervise(),
                Stage::Ground => self.stage_ground(),
                Stage::Learn => self.stage_learn(),
                Stage::Infer => self.stage_infer(),
                Stage::Calibrate => self.stage_calibrate(&mut calibration_text),
                Stage::Errors => self.stage_errors(&mut errors_text),
            };
            match result {
                Ok(counts) => {
                    manifest.stages.insert(
                        stage.name().to_string(),
                        StageRecord {
                            duration_ms: started.elapsed().as_millis() as u64,
                            counts,
                        },
                    );
                }
                Err(e) => {
                    self.remove_stage_outputs(stage);
                    return Err(e);
                }
            }
        }

        let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(self.out_dir.join("manifest.json"), manifest_json + "\n")?;
        Ok(RunOutcome {
            output_dir: self.out_dir,
            manifest,
            calibration_text,
            errors_text,
        })
    }

    fn fresh_manifest(&self) -> Manifest {
        Manifest {
            config_hash: self.hash.clone(),
            seeds: ManifestSeeds {
                holdout: self.config.holdout.seed,
                learn: self.config.learn.seed,
                sampler: self.config.sampler.seed,
            },
            stages: BTreeMap::new(),
        }
    }

    fn read_manifest(&self) -> Result<Option<Manifest>, PipelineError> {
        let path = self.out_dir.join("manifest.json");
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(path)?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    fn remove_stage_outputs(&self, stage: Stage) {
        let paths: &[PathBuf] = match stage {
            Stage::Load | Stage::Extract => &[self.out_dir.join("store")],
            Stage::Supervise => &[
                self.out_dir.join("labels.tsv"),
                self.out_dir.join("holdout.tsv"),
            ],
            Stage::Ground => &[self.out_dir.join("graph")],
            Stage::Learn => &[self.out_dir.join("weights.tsv")],
            Stage::Infer => &[self.out_dir.join("marginals.tsv")],
            Stage::Calibrate => &[self.out_dir.join("calibration.json")],
            Stage::Errors => &[self.out_dir.join("errors.json")],
        };
        for p in paths {
            if p.is_dir() {
                let _ = fs::remove_dir_all(p);
            } else {
                let _ = fs::remove_file(p);
            }
        }
    }

    // -- artifact loading -------------------------------------------------

    fn missing(stage: &'static str, artifact: impl Into<String>) -> PipelineError {
        PipelineError::MissingDependency {
            stage,
            artifact: artifact.into(),
        }
    }

    fn fail(stage: &'static str, e: impl std::error::Error + Send + Sync + 'static) -> PipelineError {
        PipelineError::StageFailed {
            stage,
            source: Box::new(e),
        }
    }

    fn ensure_store(&mut self, stage: &'static str) -> Result<(), PipelineError> {
        if self.store.is_some() {
            return Ok(());
        }
        let mut store = Store::new();
        for schema in &self.config.relations {
            store
                .define_relation(schema.clone())
                .map_err(|e| Self::fail(stage, e))?;
        }
        for schema in &self.config.relations {
            let path = self.out_dir.join("store").join(format!("{}.tsv", schema.name));
            if !path.is_file() {
                return Err(Self::missing(stage, format!("store/{}.tsv", schema.name)));
            }
            let file = fs::File::open(path)?;
            store
                .load_tsv(&schema.name, BufReader::new(file))
                .map_err(|e| Self::fail(stage, e))?;
        }
        self.store = Some(store);
        Ok(())
    }

    fn ensure_catalog(&mut self, stage: &'static str) -> Result<(), PipelineError> {
        if self.catalog.is_some() {
            return Ok(());
        }
        self.ensure_store(stage)?;
        let store = self.store.as_ref().unwrap();
        let mut catalog = VariableCatalog::new();
        for vr in &self.config.variable_relations {
            catalog
                .declare_variable_relation(store, &vr.relation, vr.key_columns.clone())
                .map_err(|e| Self::fail(stage, e))?;
        }
        self.catalog = Some(catalog);
        Ok(())
    }

    fn ensure_labels(&mut self, stage: &'static str) -> Result<(), PipelineError> {
        if self.labels.is_some() {
            return Ok(());
        }
        self.ensure_catalog(stage)?;
        let path = self.out_dir.join("labels.tsv");
        if !path.is_file() {
            return Err(Self::missing(stage, "labels.tsv"));
        }
        let file = fs::File::open(path)?;
        let labels = LabelTable::load_tsv(self.catalog.as_ref().unwrap(), BufReader::new(file))
            .map_err(|e| Self::fail(stage, e))?;
        self.labels = Some(labels);
        Ok(())
    }

    fn ensure_holdout(&mut self, stage: &'static str) -> Result<(), PipelineError> {
        if self.holdout.is_some() {
            return Ok(());
        }
        self.ensure_catalog(stage)?;
        let path = self.out_dir.join("holdout.tsv");
        if !path.is_file() {
            return Err(Self::missing(stage, "holdout.tsv"));
        }
        let file = fs::File::open(path)?;
        let holdout = HoldoutAssignment::load_tsv(
            self.catalog.as_ref().unwrap(),
            BufReader::new(file),
            self.config.holdout.fractions,
            self.config.holdout.seed,
        )
        .map_err(|e| Self::fail(stage, e))?;
        self.holdout = Some(holdout);
        Ok(())
    }

    fn ensure_graph(&mut self, stage: &'static str) -> Result<(), PipelineError> {
        if self.graph.is_some() {
            return Ok(());
        }
        self.ensure_catalog(stage)?;
        let dir = self.out_dir.join("graph");
        for name in ["variables.tsv", "factors.tsv", "weights.tsv"] {
            if !dir.join(name).is_file() {
                return Err(Self::missing(stage, format!("graph/{name}")));
            }
        }
        let open = |name: &str| fs::File::open(dir.join(name)).map(BufReader::new);
        let graph = FactorGraph::load(
            self.catalog.as_ref().unwrap(),
            open("variables.tsv")?,
            open("factors.tsv")?,
            open("weights.tsv")?,
        )
        .map_err(|e| Self::fail(stage, e))?;
        self.graph = Some(graph);
        Ok(())
    }

    fn ensure_learned(&mut self, stage: &'static str) -> Result<(), PipelineError> {
        if self.learned.is_some() {
            return Ok(());
        }
        self.ensure_graph(stage)?;
        let path = self.out_dir.join("weights.tsv");
        if !path.is_file() {
            return Err(Self::missing(stage, "weights.tsv"));
        }
        let text = fs::read_to_string(path)?;
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let value = line.split('\t').nth(2).and_then(|v| v.parse::<f64>().ok());
            match value {
                Some(v) => values.push(v),
                None => {
                    return Err(Self::fail(
                        stage,
                        std::io::Error::other(format!(
                            "weights.tsv line {}: missing value column",
                            lineno + 1
                        )),
                    ))
                }
            }
        }
        let expected = self.graph.as_ref().unwrap().weights.len();
        if values.len() != expected {
            return Err(Self::fail(
                stage,
                std::io::Error::other(format!(
                    "weights.tsv has {} rows, graph has {expected} weights",
                    values.len()
                )),
            ));
        }
        self.learned = Some(values);
        Ok(())
    }

    fn ensure_predictions(&mut self, stage: &'static str) -> Result<(), PipelineError> {
        if self.predictions.is_some() {
            return Ok(());
        }
        self.ensure_catalog(stage)?;
        let path = self.out_dir.join("marginals.tsv");
        if !path.is_file() {
            return Err(Self::missing(stage, "marginals.tsv"));
        }
        let catalog = self.catalog.as_ref().unwrap();
        let text = fs::read_to_string(path)?;
        let mut predictions = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let parse = || -> Option<Prediction> {
                let fields: Vec<&str> = line.split('\t').collect();
                let relation = unescape_field(fields.first()?)?;
                let key_types = catalog.key_types(&relation)?;
                if fields.len() != key_types.len() + 2 {
                    return None;
                }
                let values: Vec<Value> = fields[1..1 + key_types.len()]
                    .iter()
                    .zip(key_types)
                    .map(|(raw, &ty)| parse_field(raw, ty).ok())
                    .collect::<Option<_>>()?;
                let probability: f64 = fields.last()?.parse().ok()?;
                Some(Prediction {
                    key: CandidateKey::new(relation, values),
                    probability,
                })
            };
            match parse() {
                Some(p) => predictions.push(p),
                None => {
                    return Err(Self::fail(
                        stage,
                        std::io::Error::other(format!("marginals.tsv line {}: malformed", lineno + 1)),
                    ))
                }
            }
        }
        self.predictions = Some(predictions);
        Ok(())
    }

    // -- stages ------------------------------------------------------------

    fn write_store_dir(&self) -> Result<(), PipelineError> {
        let dir = self.out_dir.join("store");
        fs::create_dir_all(&dir)?;
        let store = self.store.as_ref().unwrap();
        for name in store.relation_names() {
            let mut file = fs::File::create(dir.join(format!("{name}.tsv")))?;
            store
                .dump_tsv(name, &mut file)
                .map_err(|e| Self::fail("load", e))?;
        }
        Ok(())
    }

    fn stage_load(&mut self) -> Result<BTreeMap<String, u64>, PipelineError> {
        const STAGE: &str = "load";
        let mut store = Store::new();
        for schema in &self.config.relations {
            store
                .define_relation(schema.clone())
                .map_err(|e| Self::fail(STAGE, e))?;
        }
        let mut counts = BTreeMap::new();
        for input in &self.config.inputs {
            let path = self.base_dir.join(&input.path);
            let file = fs::File::open(&path)?;
            let n = store
                .load_tsv(&input.relation, BufReader::new(file))
                .map_err(|e| Self::fail(STAGE, e))?;
            counts.insert(format!("rows:{}", input.relation), n as u64);
        }
        self.store = Some(store);
        self.write_store_dir()?;
        Ok(counts)
    }

    fn stage_extract(&mut self) -> Result<BTreeMap<String, u64>, PipelineError> {
        const STAGE: &str = "extract";
        self.ensure_store(STAGE)?;
        let mut store = self.store.take().unwrap();

        // reruns must not accumulate rows: clear every output relation once
        let mut cleared = Vec::new();
        for ex in &self.config.extractors {
            if !cleared.contains(&ex.output_relation) {
                store
                    .truncate_relation(&ex.output_relation)
                    .map_err(|e| Self::fail(STAGE, e))?;
                cleared.push(ex.output_relation.clone());
            }
        }

        let mut counts = BTreeMap::new();
        for ex in &self.config.extractors {
            let spec = ExtractorSpec {
                name: ex.name.clone(),
                input_query: ex.input.clone(),
                command: ex.command.clone(),
                output_relation: ex.output_relation.clone(),
                timeout: Duration::from_secs_f64(ex.timeout_secs),
                working_dir: Some(self.base_dir.clone()),
            };
            match run_extractor(&mut store, &spec) {
                Ok(n) => {
                    counts.insert(format!("rows:{}", ex.name), n as u64);
                }
                Err(e) => {
                    self.store = Some(store);
                    return Err(Self::fail(STAGE, e));
                }
            }
        }
        self.store = Some(store);
        self.write_store_dir()?;
        Ok(counts)
    }

    fn stage_supervise(&mut self) -> Result<BTreeMap<String, u64>, PipelineError> {
        const STAGE: &str = "supervise";
        self.ensure_catalog(STAGE)?;
        let store = self.store.as_ref().unwrap();
        let catalog = self.catalog.as_ref().unwrap();

        let mut labels = LabelTable::new();
        for rule in &self.config.label_rules {
            apply_label_rule(store, catalog, rule, &mut labels)
                .map_err(|e| Self::fail(STAGE, e))?;
        }
        let holdout = split_holdout(
            &labels,
            self.config.holdout.fractions,
            self.config.holdout.seed,
        )
        .map_err(|e| Self::fail(STAGE, e))?;

        let mut counts = BTreeMap::new();
        for (label, name) in [
            (Label::True, "labels_true"),
            (Label::False, "labels_false"),
            (Label::Abstain, "labels_abstain"),
        ] {
            counts.insert(
                name.to_string(),
                labels.iter().filter(|(_, e)| e.label == label).count() as u64,
            );
        }
        for split in [
            crate::supervision::Split::Train,
            crate::supervision::Split::Test,
            crate::supervision::Split::ErrorAnalysis,
        ] {
            counts.insert(format!("split_{}", split.as_str()), holdout.count(split) as u64);
        }

        let mut file = fs::File::create(self.out_dir.join("labels.tsv"))?;
        labels.dump_tsv(&mut file)?;
        let mut file = fs::File::create(self.out_dir.join("holdout.tsv"))?;
        holdout.dump_tsv(&mut file)?;
        self.labels = Some(labels);
        self.holdout = Some(holdout);
        Ok(counts)
    }

    fn stage_ground(&mut self) -> Result<BTreeMap<String, u64>, PipelineError> {
        const STAGE: &str = "ground";
        self.ensure_catalog(STAGE)?;
        self.ensure_labels(STAGE)?;
        self.ensure_holdout(STAGE)?;
        let graph = ground(
            self.store.as_ref().unwrap(),
            self.catalog.as_ref().unwrap(),
            &self.config.inference_rules,
            self.labels.as_ref(),
            self.holdout.as_ref(),
        )
        .map_err(|e| Self::fail(STAGE, e))?;

        let dir = self.out_dir.join("graph");
        fs::create_dir_all(&dir)?;
        graph.dump_variables(&mut fs::File::create(dir.join("variables.tsv"))?)?;
        graph.dump_factors(&mut fs::File::create(dir.join("factors.tsv"))?)?;
        graph.dump_weights(&mut fs::File::create(dir.join("weights.tsv"))?)?;

        let mut counts = BTreeMap::new();
        counts.insert("variables".into(), graph.variables.len() as u64);
        counts.insert("factors".into(), graph.factors.len() as u64);
        counts.insert("weights".into(), graph.weights.len() as u64);
        counts.insert(
            "evidence".into(),
            graph.variables.iter().filter(|v| v.evidence.is_some()).count() as u64,
        );
        self.graph = Some(graph);
        Ok(counts)
    }

    fn stage_learn(&mut self) -> Result<BTreeMap<String, u64>, PipelineError> {
        const STAGE: &str = "learn";
        self.ensure_graph(STAGE)?;
        let graph = self.graph.as_ref().unwrap();
        let learned = learn_weights(graph, &self.config.learn).map_err(|e| Self::fail(STAGE, e))?;

        let mut file = fs::File::create(self.out_dir.join("weights.tsv"))?;
        graph.with_weight_values(&learned).dump_weights(&mut file)?;

        let mut counts = BTreeMap::new();
        counts.insert(
            "learnable".into(),
            graph.weights.iter().filter(|w| !w.fixed).count() as u64,
        );
        counts.insert("weights".into(), learned.len() as u64);
        self.learned = Some(learned);
        Ok(counts)
    }

    fn stage_infer(&mut self) -> Result<BTreeMap<String, u64>, PipelineError> {
        const STAGE: &str = "infer";
        self.ensure_graph(STAGE)?;
        self.ensure_learned(STAGE)?;
        let graph = self.graph.as_ref().unwrap();
        // all non-fixed variables are free during final inference: held-out
        // marginals must be honest predictions
        let inference_graph = graph
            .with_weight_values(self.learned.as_ref().unwrap())
            .clear_evidence();
        let marginals =
            gibbs_marginals(&inference_graph, &self.config.sampler).map_err(|e| Self::fail(STAGE, e))?;

        let predictions: Vec<Prediction> = graph
            .variables
            .iter()
            .zip(&marginals.probabilities)
            .map(|(v, &probability)| Prediction {
                key: v.candidate_key(),
                probability,
            })
            .collect();

        let mut file = fs::File::create(self.out_dir.join("marginals.tsv"))?;
        for p in &predictions {
            let mut fields = vec![escape_field(&p.key.relation)];
            fields.extend(p.key.values.iter().map(format_value));
            fields.push(p.probability.to_string());
            writeln!(file, "{}", fields.join("\t"))?;
        }

        let mut counts = BTreeMap::new();
        counts.insert("marginals".into(), predictions.len() as u64);
        self.predictions = Some(predictions);
        Ok(counts)
    }

    fn stage_calibrate(
        &mut self,
        text: &mut Option<String>,
    ) -> Result<BTreeMap<String, u64>, PipelineError> {
        const STAGE: &str = "calibrate";
        self.ensure_predictions(STAGE)?;
        self.ensure_labels(STAGE)?;
        self.ensure_holdout(STAGE)?;
        let predictions = self.predictions.as_ref().unwrap();
        let labels = self.labels.as_ref().unwrap();
        let holdout = self.holdout.as_ref().unwrap();

        let by_key: std::collections::HashMap<&CandidateKey, f64> = predictions
            .iter()
            .map(|p| (&p.key, p.probability))
            .collect();
        let test: Vec<LabeledPrediction> = labels
            .iter()
            .filter(|(key, entry)| {
                entry.label != Label::Abstain
                    && holdout.split_of(key) == Some(crate::supervision::Split::Test)
            })
            .filter_map(|(key, entry)| {
                by_key.get(key).map(|&probability| LabeledPrediction {
                    key: key.clone(),
                    probability,
                    label: entry.label == Label::True,
                })
            })
            .collect();

        let report = calibrate(&test, predictions, holdout, &self.config.diagnostics)
            .map_err(|e| Self::fail(STAGE, e))?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(self.out_dir.join("calibration.json"), json + "\n")?;
        *text = Some(render_calibration_text(&report));

        let mut counts = BTreeMap::new();
        counts.insert("test_predictions".into(), test.len() as u64);
        counts.insert("whole_predictions".into(), predictions.len() as u64);
        counts.insert("flag_uncertain_mass".into(), report.uncertain_mass_flag as u64);
        counts.insert(
            "flag_shape_divergence".into(),
            report.shape_divergence_flag as u64,
        );
        Ok(counts)
    }

    fn stage_errors(
        &mut self,
        text: &mut Option<String>,
    ) -> Result<BTreeMap<String, u64>, PipelineError> {
        const STAGE: &str = "errors";
        self.ensure_predictions(STAGE)?;
        self.ensure_labels(STAGE)?;
        self.ensure_holdout(STAGE)?;
        self.ensure_graph(STAGE)?;
        self.ensure_learned(STAGE)?;

        let labels = self.labels.as_ref().unwrap();
        let holdout = self.holdout.as_ref().unwrap();
        let error_labels: BTreeMap<CandidateKey, bool> = labels
            .iter()
            .filter(|(key, entry)| {
                entry.label != Label::Abstain
                    && holdout.split_of(key) == Some(crate::supervision::Split::ErrorAnalysis)
            })
            .map(|(key, entry)| (key.clone(), entry.label == Label::True))
            .collect();

        let cases = find_errors(
            self.predictions.as_ref().unwrap(),
            &error_labels,
            &self.config.expected_facts,
            holdout,
            &self.config.diagnostics,
        )
        .map_err(|e| Self::fail(STAGE, e))?;

        // diagnose against the trained model: learned weights, train evidence
        let diagnosis_graph = self
            .graph
            .as_ref()
            .unwrap()
            .with_weight_values(self.learned.as_ref().unwrap());
        let diagnosed = diagnose_all(&diagnosis_graph, &cases, &self.config.diagnostics)
            .map_err(|e| Self::fail(STAGE, e))?;

        #[derive(Serialize)]
        struct ErrorsDoc<'a> {
            cases: &'a [ErrorCase],
        }
        let json =
            serde_json::to_string_pretty(&ErrorsDoc { cases: &diagnosed }).expect("serializes");
        fs::write(self.out_dir.join("errors.json"), json + "\n")?;
        *text = Some(render_errors_text(&diagnosed));

        let mut counts = BTreeMap::new();
        counts.insert("error_labels".into(), error_labels.len() as u64);
        counts.insert("cases".into(), diagnosed.len() as u64);
        for cat in crate::diagnostics::ErrorCategory::ALL {
            let n = diagnosed.iter().filter(|c| c.category == Some(cat)).count();
            counts.insert(format!("cases_{}", cat.name().to_lowercase()), n as u64);
        }
        Ok(counts)
    }
}
