//! Calibration reports and per-example error triage.
//!
//! [`calibrate`] bins test-set and whole-set predictions into the ten
//! probability intervals `[0,0.1), …, [0.9,1.0]` and derives three
//! diagnostics: the calibration gap (how far bin accuracy strays from the
//! bin midpoint), the uncertain-mass fraction (how much of the whole set
//! sits in `(0.1, 0.9)` instead of forming the desired "U" shape), and the
//! L1 shape divergence between the test and whole histograms (a proxy for
//! overfitting or holdout bias).
//!
//! [`find_errors`] and [`Triage::diagnose`] implement the two triage
//! decision trees: recall cases (expected true, predicted low or missing)
//! run missing-candidate → no-features → low-weight-features, and precision
//! cases (expected false, predicted high) check the top-weighted features
//! for missing negative training examples.
//!
//! Split hygiene is enforced throughout: these operations reject inputs
//! whose keys intersect the train split, and error cases may come only from
//! the error-analysis split.

use crate::grounding::{CandidateKey, FactorGraph};
use crate::supervision::{HoldoutAssignment, Split};
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub const BIN_COUNT: usize = 10;

/// Thresholds for calibration flags and triage. All configurable; defaults
/// are conservative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DiagnosticsOptions {
    /// Probability threshold separating predicted-true from predicted-false.
    pub error_threshold: f64,
    /// τ_w: learnable weights below this count as "low".
    pub low_weight_threshold: f64,
    /// How many top-weighted features the precision tree inspects.
    pub top_k: usize,
    /// Flag shape divergence above this L1 distance.
    pub shape_divergence_threshold: f64,
    /// Flag uncertain mass above this fraction.
    pub uncertain_mass_threshold: f64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions {
            error_threshold: 0.5,
            low_weight_threshold: 0.2,
            top_k: 5,
            shape_divergence_threshold: 0.25,
            uncertain_mass_threshold: 0.3,
        }
    }
}

/// A per-candidate probability, keyed by candidate fact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub key: CandidateKey,
    pub probability: f64,
}

/// A test prediction with its expected label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledPrediction {
    pub key: CandidateKey,
    pub probability: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    /// Fraction of test predictions in this bin that are true; `None` when
    /// the bin holds no test predictions.
    pub accuracy: Option<f64>,
    pub n_test: usize,
    pub n_whole: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    /// max over non-empty bins of |accuracy − bin midpoint|.
    pub calibration_gap: f64,
    /// Share of whole-set predictions strictly inside (0.1, 0.9).
    pub uncertain_mass: f64,
    pub uncertain_mass_flag: bool,
    /// L1 distance between the normalized test and whole histograms.
    pub shape_divergence: f64,
    /// Set when the test and whole shapes diverge: possible overfitting or
    /// holdout bias.
    pub shape_divergence_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCategory {
    CandidateMissing,
    NoFeatures,
    LowWeightFeatures,
    InsufficientNegatives,
    MiscPrecision,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::CandidateMissing,
        ErrorCategory::NoFeatures,
        ErrorCategory::LowWeightFeatures,
        ErrorCategory::InsufficientNegatives,
        ErrorCategory::MiscPrecision,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::CandidateMissing => "CANDIDATE_MISSING",
            ErrorCategory::NoFeatures => "NO_FEATURES",
            ErrorCategory::LowWeightFeatures => "LOW_WEIGHT_FEATURES",
            ErrorCategory::InsufficientNegatives => "INSUFFICIENT_NEGATIVES",
            ErrorCategory::MiscPrecision => "MISC_PRECISION",
        }
    }
}

/// One feature (learnable weight) touching an error case, with its learned
/// weight and train-split label counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureEvidence {
    pub feature: String,
    pub weight: f64,
    pub train_positive: usize,
    pub train_negative: usize,
}

/// A categorized (or not-yet-categorized) prediction error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCase {
    pub key: CandidateKey,
    pub expected: bool,
    /// Absent when the fact was never extracted as a candidate.
    pub probability: Option<f64>,
    pub category: Option<ErrorCategory>,
    pub evidence: Vec<FeatureEvidence>,
}

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("empty test set")]
    EmptyTestSet,
    #[error("split hygiene: key {0} belongs to the train split")]
    TrainKey(String),
    #[error("key {0} is not in the error-analysis split")]
    NotErrorAnalysisKey(String),
    #[error("unknown case key {0}: not a candidate in the graph")]
    UnknownCaseKey(String),
}

fn bin_index(p: f64) -> usize {
    ((p * BIN_COUNT as f64) as usize).min(BIN_COUNT - 1)
}

/// Builds the three-panel calibration report over the ten probability bins.
pub fn calibrate(
    test: &[LabeledPrediction],
    whole: &[Prediction],
    holdout: &HoldoutAssignment,
    opts: &DiagnosticsOptions,
) -> Result<CalibrationReport, DiagnosticsError> {
    if test.is_empty() {
        return Err(DiagnosticsError::EmptyTestSet);
    }
    for t in test {
        if holdout.split_of(&t.key) == Some(Split::Train) {
            return Err(DiagnosticsError::TrainKey(t.key.display()));
        }
    }

    let mut n_test = [0usize; BIN_COUNT];
    let mut n_true = [0usize; BIN_COUNT];
    let mut n_whole = [0usize; BIN_COUNT];
    for t in test {
        let b = bin_index(t.probability);
        n_test[b] += 1;
        n_true[b] += usize::from(t.label);
    }
    let mut uncertain = 0usize;
    for p in whole {
        n_whole[bin_index(p.probability)] += 1;
        if p.probability > 0.1 && p.probability < 0.9 {
            uncertain += 1;
        }
    }

    let bins: Vec<CalibrationBin> = (0..BIN_COUNT)
        .map(|b| CalibrationBin {
            lo: b as f64 / 10.0,
            hi: (b + 1) as f64 / 10.0,
            accuracy: (n_test[b] > 0).then(|| n_true[b] as f64 / n_test[b] as f64),
            n_test: n_test[b],
            n_whole: n_whole[b],
        })
        .collect();

    let calibration_gap = bins
        .iter()
        .filter_map(|b| b.accuracy.map(|a| (a - (b.lo + b.hi) / 2.0).abs()))
        .fold(0.0f64, f64::max);

    let uncertain_mass = if whole.is_empty() {
        0.0
    } else {
        uncertain as f64 / whole.len() as f64
    };

    let test_total = test.len() as f64;
    let whole_total = whole.len() as f64;
    let shape_divergence: f64 = (0..BIN_COUNT)
        .map(|b| {
            let t = n_test[b] as f64 / test_total;
            let w = if whole.is_empty() {
                0.0
            } else {
                n_whole[b] as f64 / whole_total
            };
            (t - w).abs()
        })
        .sum();

    Ok(CalibrationReport {
        bins,
        calibration_gap,
        uncertain_mass,
        uncertain_mass_flag: uncertain_mass > opts.uncertain_mass_threshold,
        shape_divergence,
        shape_divergence_flag: shape_divergence > opts.shape_divergence_threshold,
    })
}

/// Finds recall and precision errors among the error-analysis labels and the
/// expected facts.
///
/// Recall errors are expected-true keys predicted strictly below the
/// threshold or never extracted as candidates; precision errors are
/// expected-false keys predicted strictly above it. A prediction exactly at
/// the threshold is not an error.
pub fn find_errors(
    predictions: &[Prediction],
    error_labels: &BTreeMap<CandidateKey, bool>,
    expected_facts: &[CandidateKey],
    holdout: &HoldoutAssignment,
    opts: &DiagnosticsOptions,
) -> Result<Vec<ErrorCase>, DiagnosticsError> {
    let by_key: HashMap<&CandidateKey, f64> = predictions
        .iter()
        .map(|p| (&p.key, p.probability))
        .collect();
    let threshold = opts.error_threshold;

    let mut cases: BTreeMap<CandidateKey, ErrorCase> = BTreeMap::new();
    for (key, &expected) in error_labels {
        match holdout.split_of(key) {
            Some(Split::ErrorAnalysis) => {}
            Some(Split::Train) => return Err(DiagnosticsError::TrainKey(key.display())),
            _ => return Err(DiagnosticsError::NotErrorAnalysisKey(key.display())),
        }
        let probability = by_key.get(key).copied();
        let is_error = if expected {
            probability.is_none_or(|p| p < threshold)
        } else {
            probability.is_some_and(|p| p > threshold)
        };
        if is_error {
            cases.insert(
                key.clone(),
                ErrorCase {
                    key: key.clone(),
                    expected,
                    probability,
                    category: None,
                    evidence: Vec::new(),
                },
            );
        }
    }
    // expected facts (e.g. from a gold KB) are expected-true; they need not
    // appear in the holdout at all
    for key in expected_facts {
        if cases.contains_key(key) || error_labels.contains_key(key) {
            continue;
        }
        let probability = by_key.get(key).copied();
        if probability.is_none_or(|p| p < threshold) {
            cases.insert(
                key.clone(),
                ErrorCase {
                    key: key.clone(),
                    expected: true,
                    probability,
                    category: None,
                    evidence: Vec::new(),
                },
            );
        }
    }
    Ok(cases.into_values().collect())
}

/// Categorizes error cases against a grounded graph whose evidence carries
/// the train labels and whose weight values are the learned ones.
pub struct Triage<'g> {
    graph: &'g FactorGraph,
    opts: DiagnosticsOptions,
    var_by_key: HashMap<CandidateKey, usize>,
    /// Learnable weight ids touching each variable, deduplicated.
    features_of: Vec<Vec<usize>>,
    /// (train-positive, train-negative) distinct-variable counts per weight.
    train_counts: Vec<(usize, usize)>,
}

impl<'g> Triage<'g> {
    pub fn new(graph: &'g FactorGraph, opts: DiagnosticsOptions) -> Self {
        let var_by_key = graph
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.candidate_key(), i))
            .collect();

        let n = graph.variables.len();
        let mut features_of: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut touched: Vec<std::collections::BTreeSet<usize>> =
            vec![std::collections::BTreeSet::new(); graph.weights.len()];
        for f in &graph.factors {
            if graph.weights[f.weight].fixed {
                continue;
            }
            for &v in &f.vars {
                if !features_of[v].contains(&f.weight) {
                    features_of[v].push(f.weight);
                }
                touched[f.weight].insert(v);
            }
        }
        for feats in &mut features_of {
            feats.sort_unstable();
        }
        let train_counts = touched
            .iter()
            .map(|vars| {
                let mut pos = 0;
                let mut neg = 0;
                for &v in vars {
                    match graph.variables[v].evidence {
                        Some(true) => pos += 1,
                        Some(false) => neg += 1,
                        None => {}
                    }
                }
                (pos, neg)
            })
            .collect();

        Triage {
            graph,
            opts,
            var_by_key,
            features_of,
            train_counts,
        }
    }

    fn evidence_for(&self, weight_ids: &[usize]) -> Vec<FeatureEvidence> {
        let mut out: Vec<FeatureEvidence> = weight_ids
            .iter()
            .map(|&j| {
                let w = &self.graph.weights[j];
                let (train_positive, train_negative) = self.train_counts[j];
                FeatureEvidence {
                    feature: w.label(),
                    weight: w.value,
                    train_positive,
                    train_negative,
                }
            })
            .collect();
        // highest weight first; ties broken by label for determinism
        out.sort_by(|a, b| {
            b.weight
                .total_cmp(&a.weight)
                .then_with(|| a.feature.cmp(&b.feature))
        });
        out
    }

    /// Assigns exactly one category per case, following the recall tree
    /// (missing → no-features → low-weight, in that order) or the precision
    /// tree (insufficient negatives among the top-k features → otherwise
    /// miscellaneous).
    pub fn diagnose(&self, case: &ErrorCase) -> Result<ErrorCase, DiagnosticsError> {
        let mut out = case.clone();
        if case.expected {
            // recall tree
            if case.probability.is_none() {
                out.category = Some(ErrorCategory::CandidateMissing);
                return Ok(out);
            }
            let v = *self
                .var_by_key
                .get(&case.key)
                .ok_or_else(|| DiagnosticsError::UnknownCaseKey(case.key.display()))?;
            let features = &self.features_of[v];
            if features.is_empty() {
                out.category = Some(ErrorCategory::NoFeatures);
                return Ok(out);
            }
            // terminal recall bucket: attach the per-feature train counts so
            // the developer can see which weights stayed low and why
            out.evidence = self.evidence_for(features);
            out.category = Some(ErrorCategory::LowWeightFeatures);
            Ok(out)
        } else {
            // precision tree
            let v = *self
                .var_by_key
                .get(&case.key)
                .ok_or_else(|| DiagnosticsError::UnknownCaseKey(case.key.display()))?;
            let mut evidence = self.evidence_for(&self.features_of[v]);
            evidence.truncate(self.opts.top_k);
            let starved = evidence.iter().any(|e| e.train_negative == 0);
            out.evidence = evidence;
            out.category = Some(if starved {
                ErrorCategory::InsufficientNegatives
            } else {
                ErrorCategory::MiscPrecision
            });
            Ok(out)
        }
    }
}

/// Convenience: categorize every case against one graph.
pub fn diagnose_all(
    graph: &FactorGraph,
    cases: &[ErrorCase],
    opts: &DiagnosticsOptions,
) -> Result<Vec<ErrorCase>, DiagnosticsError> {
    let triage = Triage::new(graph, *opts);
    cases.iter().map(|c| triage.diagnose(c)).collect()
}

/// Plain-text rendering of a calibration report.
pub fn render_calibration_text(report: &CalibrationReport) -> String {
    let mut out = String::new();
    out.push_str("bin        accuracy   n_test  n_whole\n");
    for b in &report.bins {
        let acc = b
            .accuracy
            .map(|a| format!("{a:.3}"))
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "[{:.1},{:.1}{} {:>9} {:>8} {:>8}\n",
            b.lo,
            b.hi,
            if b.hi >= 1.0 { "]" } else { ")" },
            acc,
            b.n_test,
            b.n_whole
        ));
    }
    out.push_str(&format!(
        "calibration gap {:.4}; uncertain mass {:.4}{}; shape divergence {:.4}{}\n",
        report.calibration_gap,
        report.uncertain_mass,
        if report.uncertain_mass_flag {
            " (flagged)"
        } else {
            ""
        },
        report.shape_divergence,
        if report.shape_divergence_flag {
            " (flagged: possible overfitting or holdout bias)"
        } else {
            ""
        },
    ));
    out
}

/// Plain-text rendering of categorized error cases.
pub fn render_errors_text(cases: &[ErrorCase]) -> String {
    let mut out = String::new();
    for c in cases {
        let prob = c
            .probability
            .map(|p| format!("{p:.4}"))
            .unwrap_or_else(|| "absent".to_string());
        let category = c
            .category
            .map(|cat| format!("{cat:?}"))
            .unwrap_or_else(|| "uncategorized".to_string());
        out.push_str(&format!(
            "{} expected={} p={} {}\n",
            c.key.display(),
            c.expected,
            prob,
            category
        ));
        for e in &c.evidence {
            out.push_str(&format!(
                "    {} w={:.4} train +{} / -{}\n",
                e.feature, e.weight, e.train_positive, e.train_negative
            ));
        }
    }
    out
}
