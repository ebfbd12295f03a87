//! Shared helpers for the integration and acceptance suites: running the
//! bundled toy spouse app and loading its artifacts back.

use kbforge::config::AppConfig;
use kbforge::grounding::{CandidateKey, FactorGraph, VariableCatalog};
use kbforge::pipeline::{Pipeline, RunOutcome, Stage};
use kbforge::relstore::Store;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/spouse_toy")
}

pub fn toy_config() -> AppConfig {
    let text = fs::read_to_string(fixture_dir().join("config.json")).unwrap();
    AppConfig::from_json(&text).unwrap()
}

pub fn run_toy(config: AppConfig, out: &Path) -> RunOutcome {
    Pipeline::new(config, fixture_dir(), Some(out.to_path_buf()))
        .unwrap()
        .run(&Stage::ALL)
        .unwrap()
}

#[allow(dead_code)] // different suites read different fields
pub struct Artifacts {
    pub store: Store,
    pub catalog: VariableCatalog,
    pub graph: FactorGraph,
    pub learned: Vec<f64>,
    pub marginals: Vec<(CandidateKey, f64)>,
}

/// Reads a finished run back from disk through the public load paths.
pub fn load_artifacts(config: &AppConfig, out: &Path) -> Artifacts {
    let mut store = Store::new();
    for schema in &config.relations {
        store.define_relation(schema.clone()).unwrap();
    }
    for schema in &config.relations {
        let path = out.join("store").join(format!("{}.tsv", schema.name));
        let file = fs::File::open(&path).unwrap();
        store.load_tsv(&schema.name, BufReader::new(file)).unwrap();
    }

    let mut catalog = VariableCatalog::new();
    for vr in &config.variable_relations {
        catalog
            .declare_variable_relation(&store, &vr.relation, vr.key_columns.clone())
            .unwrap();
    }

    let open = |name: &str| BufReader::new(fs::File::open(out.join(name)).unwrap());
    let graph = FactorGraph::load(
        &catalog,
        open("graph/variables.tsv"),
        open("graph/factors.tsv"),
        open("graph/weights.tsv"),
    )
    .unwrap();

    let learned: Vec<f64> = fs::read_to_string(out.join("weights.tsv"))
        .unwrap()
        .lines()
        .map(|line| line.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();

    let marginals = fs::read_to_string(out.join("marginals.tsv"))
        .unwrap()
        .lines()
        .map(|line| {
            let fields: Vec<&str> = line.split('\t').collect();
            let key = CandidateKey::new(
                fields[0].to_string(),
                fields[1..fields.len() - 1]
                    .iter()
                    .map(|s| kbforge::relstore::Value::Text(s.to_string()))
                    .collect(),
            );
            (key, fields.last().unwrap().parse().unwrap())
        })
        .collect();

    Artifacts {
        store,
        catalog,
        graph,
        learned,
        marginals,
    }
}
