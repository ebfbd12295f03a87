//! A declarative knowledge-base construction engine.
//!
//! The library turns relational evidence, subprocess feature extractors,
//! distant-supervision rules, and weighted logical inference rules into a
//! grounded factor graph over Boolean random variables; learns factor weights
//! from noisy labels; computes per-fact marginal probabilities; and produces
//! calibration and error-analysis reports for systematic quality debugging.
//!
//! A run moves through the same stages the [`pipeline`] CLI exposes:
//!
//! 1. **Evidence**: TSV inputs land in an in-memory relational store
//!    ([`relstore`]) and user-defined extractor subprocesses ([`udf`]) derive
//!    candidate and feature relations from them.
//! 2. **Model**: distant-supervision rules label candidates ([`supervision`]),
//!    and inference rules compile candidates plus correlations into a factor
//!    graph ([`grounding`]).
//! 3. **Inference**: weights are learned and marginals estimated by Gibbs
//!    sampling ([`engine`]), then summarized as calibration plots and
//!    per-example error triage ([`diagnostics`]).

pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod grounding;
pub mod pipeline;
pub mod relstore;
pub mod supervision;
pub mod udf;
