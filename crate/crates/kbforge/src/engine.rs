//! Marginal inference and weight learning over factor graphs.
//!
//! Three routes are provided:
//!
//! - [`exact_marginals`]: full enumeration of the 2^n worlds of
//!   `P(x) ∝ exp(Σ_f w_f·g_f(x))`, for graphs with at most
//!   [`MAX_EXACT_VARS`] free variables. This is the testing oracle.
//! - [`gibbs_marginals`]: single-site Gibbs sampling with a fixed ascending
//!   scan order. The flip probability of variable `v` is
//!   `σ(Σ_{f∋v} w_f·[g_f(x; x_v=1) − g_f(x; x_v=0)])`.
//! - [`learn_weights`]: stochastic gradient ascent on the likelihood of the
//!   clamped (train-labeled) variables, with expectations estimated by two
//!   persistent Gibbs chains (one clamped, one free) so learning never
//!   requires enumeration. `∂ℓ/∂w_j = E_clamped[S_j] − E_free[S_j] − λ·w_j`
//!   where `S_j` sums `g_f` over the factors tied to weight `j`. Exact
//!   expectations remain available ([`exact_gradient`],
//!   [`exact_log_likelihood`]) for gradient checks on small graphs.
//!
//! All randomness comes from `ChaCha8Rng` seeded from a caller-provided
//! 64-bit seed; identical inputs give bit-identical outputs. Statistical
//! guarantees use tolerance bands, bit-exactness holds only within this
//! implementation.

use crate::grounding::{FactorGraph, GraphFactor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Enumeration limit for the exact oracle.
pub const MAX_EXACT_VARS: usize = 20;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("exact marginals need ≤ {max} free variables, graph has {free}")]
    TooManyVariables { free: usize, max: usize },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("graph has no learnable weights")]
    NoLearnableWeights,
    #[error("no train-labeled variable touches a learnable weight")]
    NoLabeledVariables,
    #[error("weight table has {got} entries, expected {expected}")]
    WeightTableSize { got: usize, expected: usize },
}

/// Gibbs sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerOptions {
    /// Total post-burn-in sweeps kept (split across chains).
    pub n_samples: usize,
    /// Discarded sweeps per chain.
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            n_samples: 10_000,
            burn_in: 1_000,
            seed: 1,
            chains: 1,
        }
    }
}

/// Weight-learning settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnOptions {
    /// Number of gradient steps.
    pub epochs: usize,
    pub step_size: f64,
    /// Step at epoch t (1-based) is `step_size / t^step_decay`.
    pub step_decay: f64,
    /// L2 strength λ.
    pub l2: f64,
    /// Gibbs sweeps per chain per gradient step.
    pub chain_samples: usize,
    pub seed: u64,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions {
            epochs: 100,
            step_size: 0.01,
            step_decay: 0.5,
            l2: 0.01,
            chain_samples: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
}

/// Per-variable estimates of `P(x_v = 1)`, indexed like the graph's
/// variables. `sampling` is `None` for exact results.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    pub probabilities: Vec<f64>,
    pub sampling: Option<SampleMeta>,
}

impl MarginalTable {
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

/// Evaluates one factor against a full variable assignment.
#[inline]
fn eval_factor(f: &GraphFactor, state: &[bool]) -> bool {
    use crate::grounding::FactorFunction::*;
    match f.function {
        IsTrue => state[f.vars[0]],
        And => f.vars.iter().all(|&v| state[v]),
        Or => f.vars.iter().any(|&v| state[v]),
        Imply => {
            let (head, body) = f.vars.split_last().expect("imply arity");
            !(body.iter().all(|&v| state[v]) && !state[*head])
        }
        Equal => state[f.vars[0]] == state[f.vars[1]],
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn evidence_clamp(graph: &FactorGraph) -> Vec<Option<bool>> {
    graph.variables.iter().map(|v| v.evidence).collect()
}

fn weight_values(graph: &FactorGraph) -> Vec<f64> {
    graph.weights.iter().map(|w| w.value).collect()
}

// ---------------------------------------------------------------------------
// Exact enumeration
// ---------------------------------------------------------------------------

struct Enumeration {
    log_z: f64,
    /// P(x_v = 1) per variable.
    marginals: Vec<f64>,
    /// E[S_j] per weight, where S_j = Σ_{f: weight j} g_f.
    weight_expectations: Vec<f64>,
}

/// Enumerates all assignments of the unclamped variables. Two passes: the
/// first finds the maximum score for stable exponentiation.
fn enumerate(
    graph: &FactorGraph,
    clamp: &[Option<bool>],
    weights: &[f64],
) -> Result<Enumeration, EngineError> {
    let free: Vec<usize> = (0..graph.variables.len())
        .filter(|&v| clamp[v].is_none())
        .collect();
    if free.len() > MAX_EXACT_VARS {
        return Err(EngineError::TooManyVariables {
            free: free.len(),
            max: MAX_EXACT_VARS,
        });
    }
    let mut state: Vec<bool> = clamp.iter().map(|c| c.unwrap_or(false)).collect();
    let worlds: u64 = 1u64 << free.len();

    let score = |state: &[bool]| -> f64 {
        graph
            .factors
            .iter()
            .filter(|f| eval_factor(f, state))
            .map(|f| weights[f.weight])
            .sum()
    };

    let mut max_score = f64::NEG_INFINITY;
    for mask in 0..worlds {
        for (bit, &v) in free.iter().enumerate() {
            state[v] = (mask >> bit) & 1 == 1;
        }
        max_score = max_score.max(score(&state));
    }

    let mut z = 0.0;
    let mut true_mass = vec![0.0f64; graph.variables.len()];
    let mut stat_mass = vec![0.0f64; graph.weights.len()];
    for mask in 0..worlds {
        for (bit, &v) in free.iter().enumerate() {
            state[v] = (mask >> bit) & 1 == 1;
        }
        let p = (score(&state) - max_score).exp();
        z += p;
        for (v, mass) in true_mass.iter_mut().enumerate() {
            if state[v] {
                *mass += p;
            }
        }
        for f in &graph.factors {
            if eval_factor(f, &state) {
                stat_mass[f.weight] += p;
            }
        }
    }

    let mut marginals: Vec<f64> = true_mass.iter().map(|m| m / z).collect();
    for (v, c) in clamp.iter().enumerate() {
        if let Some(b) = c {
            marginals[v] = if *b { 1.0 } else { 0.0 };
        }
    }
    Ok(Enumeration {
        log_z: z.ln() + max_score,
        marginals,
        weight_expectations: stat_mass.iter().map(|m| m / z).collect(),
    })
}

/// Exact marginals by full enumeration, with evidence clamped.
pub fn exact_marginals(graph: &FactorGraph) -> Result<MarginalTable, EngineError> {
    let clamp = evidence_clamp(graph);
    let e = enumerate(graph, &clamp, &weight_values(graph))?;
    Ok(MarginalTable {
        probabilities: e.marginals,
        sampling: None,
    })
}

/// Log-likelihood of the evidence under `weights`:
/// `log Z(evidence clamped) − log Z(free)`. No L2 term.
pub fn exact_log_likelihood(graph: &FactorGraph, weights: &[f64]) -> Result<f64, EngineError> {
    if weights.len() != graph.weights.len() {
        return Err(EngineError::WeightTableSize {
            got: weights.len(),
            expected: graph.weights.len(),
        });
    }
    let clamped = enumerate(graph, &evidence_clamp(graph), weights)?;
    let free = enumerate(graph, &vec![None; graph.variables.len()], weights)?;
    Ok(clamped.log_z - free.log_z)
}

/// Exact likelihood gradient at `weights`:
/// `E_clamped[S_j] − E_free[S_j] − λ·w_j` for learnable weights, 0 for fixed.
pub fn exact_gradient(
    graph: &FactorGraph,
    weights: &[f64],
    l2: f64,
) -> Result<Vec<f64>, EngineError> {
    if weights.len() != graph.weights.len() {
        return Err(EngineError::WeightTableSize {
            got: weights.len(),
            expected: graph.weights.len(),
        });
    }
    let clamped = enumerate(graph, &evidence_clamp(graph), weights)?;
    let free = enumerate(graph, &vec![None; graph.variables.len()], weights)?;
    Ok((0..graph.weights.len())
        .map(|j| {
            if graph.weights[j].fixed {
                0.0
            } else {
                clamped.weight_expectations[j] - free.weight_expectations[j] - l2 * weights[j]
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Gibbs sampling
// ---------------------------------------------------------------------------

/// One Gibbs chain with private state. Clamped variables never flip.
struct GibbsChain<'g> {
    graph: &'g FactorGraph,
    adjacency: &'g [Vec<usize>],
    clamp: Vec<Option<bool>>,
    state: Vec<bool>,
    rng: ChaCha8Rng,
}

impl<'g> GibbsChain<'g> {
    fn new(
        graph: &'g FactorGraph,
        adjacency: &'g [Vec<usize>],
        clamp: Vec<Option<bool>>,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = clamp
            .iter()
            .map(|c| match c {
                Some(b) => *b,
                None => rng.random::<bool>(),
            })
            .collect();
        GibbsChain {
            graph,
            adjacency,
            clamp,
            state,
            rng,
        }
    }

    /// One full sweep in ascending variable-index order.
    fn sweep(&mut self, weights: &[f64]) {
        for v in 0..self.state.len() {
            if self.clamp[v].is_some() {
                continue;
            }
            let mut delta = 0.0;
            for &fi in &self.adjacency[v] {
                let f = &self.graph.factors[fi];
                self.state[v] = true;
                let g1 = eval_factor(f, &self.state);
                self.state[v] = false;
                let g0 = eval_factor(f, &self.state);
                delta += weights[f.weight] * ((g1 as i8 - g0 as i8) as f64);
            }
            self.state[v] = self.rng.random::<f64>() < sigmoid(delta);
        }
    }
}

fn derive_chain_seed(seed: u64, chain: usize) -> u64 {
    // splitmix64 of the seed xor a chain-specific odd multiplier
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(chain as u64 + 1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gibbs marginals: post-burn-in sample means, deterministic given the seed.
/// Evidence-clamped variables report their clamped value exactly.
pub fn gibbs_marginals(
    graph: &FactorGraph,
    opts: &SamplerOptions,
) -> Result<MarginalTable, EngineError> {
    if opts.n_samples == 0 {
        return Err(EngineError::InvalidOptions("n_samples must be > 0".into()));
    }
    if opts.chains == 0 {
        return Err(EngineError::InvalidOptions("chains must be ≥ 1".into()));
    }
    let adjacency = graph.adjacency();
    let weights = weight_values(graph);
    let clamp = evidence_clamp(graph);
    let n = graph.variables.len();

    // split the sample budget across chains; earlier chains take the remainder
    let per_chain: Vec<usize> = (0..opts.chains)
        .map(|c| opts.n_samples / opts.chains + usize::from(c < opts.n_samples % opts.chains))
        .collect();

    let chain_counts: Vec<(Vec<u64>, usize)> = per_chain
        .par_iter()
        .enumerate()
        .filter(|(_, &kept)| kept > 0)
        .map(|(c, &kept)| {
            let mut chain = GibbsChain::new(
                graph,
                &adjacency,
                clamp.clone(),
                derive_chain_seed(opts.seed, c),
            );
            for _ in 0..opts.burn_in {
                chain.sweep(&weights);
            }
            let mut counts = vec![0u64; n];
            for _ in 0..kept {
                chain.sweep(&weights);
                for (v, count) in counts.iter_mut().enumerate() {
                    *count += chain.state[v] as u64;
                }
            }
            (counts, kept)
        })
        .collect();

    let mut totals = vec![0u64; n];
    let mut total_kept = 0usize;
    for (counts, kept) in chain_counts {
        for (t, c) in totals.iter_mut().zip(counts) {
            *t += c;
        }
        total_kept += kept;
    }

    let mut probabilities: Vec<f64> = totals
        .iter()
        .map(|&t| t as f64 / total_kept as f64)
        .collect();
    for (v, c) in clamp.iter().enumerate() {
        if let Some(b) = c {
            probabilities[v] = if *b { 1.0 } else { 0.0 };
        }
    }
    Ok(MarginalTable {
        probabilities,
        sampling: Some(SampleMeta {
            n_samples: opts.n_samples,
            burn_in: opts.burn_in,
            seed: opts.seed,
            chains: opts.chains,
        }),
    })
}

// ---------------------------------------------------------------------------
// Weight learning
// ---------------------------------------------------------------------------

/// Learns the learnable weights by stochastic gradient ascent on the
/// likelihood of the train-labeled (evidence) variables, estimating
/// expectations with two persistent Gibbs chains. Returns the full weight
/// value table; fixed weights are untouched.
pub fn learn_weights(graph: &FactorGraph, opts: &LearnOptions) -> Result<Vec<f64>, EngineError> {
    if opts.epochs == 0 || opts.chain_samples == 0 {
        return Err(EngineError::InvalidOptions(
            "epochs and chain_samples must be ≥ 1".into(),
        ));
    }
    if opts.step_size <= 0.0 {
        return Err(EngineError::InvalidOptions("step_size must be > 0".into()));
    }
    if opts.l2 < 0.0 || opts.step_decay < 0.0 {
        return Err(EngineError::InvalidOptions(
            "l2 and step_decay must be ≥ 0".into(),
        ));
    }
    if graph.weights.iter().all(|w| w.fixed) {
        return Err(EngineError::NoLearnableWeights);
    }
    let touches_labeled = graph.factors.iter().any(|f| {
        !graph.weights[f.weight].fixed
            && f.vars
                .iter()
                .any(|&v| graph.variables[v].evidence.is_some())
    });
    if !touches_labeled {
        return Err(EngineError::NoLabeledVariables);
    }

    let adjacency = graph.adjacency();
    let mut weights = weight_values(graph);
    let n_weights = weights.len();

    let mut clamped_chain = GibbsChain::new(
        graph,
        &adjacency,
        evidence_clamp(graph),
        derive_chain_seed(opts.seed, 0),
    );
    let mut free_chain = GibbsChain::new(
        graph,
        &adjacency,
        vec![None; graph.variables.len()],
        derive_chain_seed(opts.seed, 1),
    );

    let mut clamped_sums = vec![0.0f64; n_weights];
    let mut free_sums = vec![0.0f64; n_weights];
    for t in 1..=opts.epochs {
        clamped_sums.fill(0.0);
        free_sums.fill(0.0);
        for _ in 0..opts.chain_samples {
            clamped_chain.sweep(&weights);
            free_chain.sweep(&weights);
            for f in &graph.factors {
                if graph.weights[f.weight].fixed {
                    continue;
                }
                if eval_factor(f, &clamped_chain.state) {
                    clamped_sums[f.weight] += 1.0;
                }
                if eval_factor(f, &free_chain.state) {
                    free_sums[f.weight] += 1.0;
                }
            }
        }
        let step = opts.step_size / (t as f64).powf(opts.step_decay);
        let k = opts.chain_samples as f64;
        for j in 0..n_weights {
            if graph.weights[j].fixed {
                continue;
            }
            let grad = clamped_sums[j] / k - free_sums[j] / k - opts.l2 * weights[j];
            weights[j] += step * grad;
        }
    }
    Ok(weights)
}

pub mod synth;
