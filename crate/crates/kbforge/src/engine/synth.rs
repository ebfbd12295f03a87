//! Seeded synthetic factor graphs, used by the oracle-equivalence and
//! gradient-check test suites.

use crate::grounding::{FactorFunction, FactorGraph, GraphFactor, GraphVariable, GraphWeight};
use crate::relstore::Value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub max_vars: usize,
    pub max_factors: usize,
    /// Weights drawn uniformly from this closed range.
    pub weight_range: (f64, f64),
    /// Probability that a variable carries (random) evidence.
    pub evidence_fraction: f64,
    /// Probability that a weight is learnable rather than fixed.
    pub learnable_fraction: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            max_vars: 16,
            max_factors: 40,
            weight_range: (-3.0, 3.0),
            evidence_fraction: 0.0,
            learnable_fraction: 0.0,
        }
    }
}

/// Builds a random graph with mixed factor kinds. Deterministic in `seed`.
pub fn random_graph(seed: u64, opts: &SynthOptions) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_vars = rng.random_range(2..=opts.max_vars.max(2));
    let n_factors = rng.random_range(1..=opts.max_factors.max(1));

    let variables: Vec<GraphVariable> = (0..n_vars)
        .map(|i| {
            let evidence = if rng.random::<f64>() < opts.evidence_fraction {
                Some(rng.random::<bool>())
            } else {
                None
            };
            GraphVariable {
                relation: "synthetic".into(),
                key: vec![Value::Int(i as i64)],
                evidence,
            }
        })
        .collect();

    // a weight pool smaller than the factor count exercises weight tying
    let n_weights = rng.random_range(1..=n_factors);
    let weights: Vec<GraphWeight> = (0..n_weights)
        .map(|j| {
            let value = rng.random_range(opts.weight_range.0..=opts.weight_range.1);
            let fixed = rng.random::<f64>() >= opts.learnable_fraction;
            GraphWeight {
                value,
                fixed,
                rule: "synthetic_rule".into(),
                tie_key: vec![Value::Int(j as i64)],
            }
        })
        .collect();

    let kinds = [
        FactorFunction::IsTrue,
        FactorFunction::And,
        FactorFunction::Or,
        FactorFunction::Imply,
        FactorFunction::Equal,
    ];
    let factors: Vec<GraphFactor> = (0..n_factors)
        .map(|_| {
            let function = kinds[rng.random_range(0..kinds.len())];
            let arity = match function {
                FactorFunction::IsTrue => 1,
                FactorFunction::Equal => 2,
                _ => rng.random_range(2..=3.min(n_vars)),
            };
            let vars = rand::seq::index::sample(&mut rng, n_vars, arity).into_vec();
            GraphFactor {
                function,
                weight: rng.random_range(0..n_weights),
                vars,
            }
        })
        .collect();

    FactorGraph {
        variables,
        factors,
        weights,
    }
}
