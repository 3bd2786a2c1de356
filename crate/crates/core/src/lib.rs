//! Semantic-calibration toolkit.
//!
//! A sequence model together with a collapsing function `B` (grouping
//! semantically equivalent outputs into one of `K` classes) induces a
//! `K`-way classifier: the class probabilities are the pushforward of the
//! sequence distribution through `B`. This crate builds that pipeline at
//! desk scale — exactly enumerable toy autoregressive models stand in for
//! the LLM — and verifies the theory that connects calibration of the
//! induced classifier to loss optimality under exponential-tilting
//! perturbations:
//!
//! - [`prob`] — exact-arithmetic categorical distributions, softmax, KL,
//!   entropy, log-sum-exp.
//! - [`seqmodel`] — toy autoregressive models, exact enumeration, sampling,
//!   and fixture builders with controlled calibration.
//! - [`collapse`] — collapsing functions, the pushforward classifier, the
//!   collapsing matrix, and plurality votes over samples.
//! - [`perturb`] — exponential tilting, the confidence and full perturbation
//!   families, intermediate class-confidences, and the token-level circuits
//!   that realize sequence-level perturbations autoregressively.
//! - [`calibmetrics`] — exact conditional residuals, weighted calibration
//!   error, SmoothECE, binned ECE, and reliability-diagram data.
//! - [`lossopt`] — proper losses and their duals, sequence cross-entropy,
//!   local loss-optimality gaps, and quantitative calibration/gap bounds.
//! - [`conformal`] — top-probability conformal sets and exact coverage.
//! - [`ingest`] — turning recorded generation logs into
//!   (confidence, outcome) pairs via normalization, equivalence clustering,
//!   plurality voting, and exclusion filtering.

pub mod calibmetrics;
pub mod collapse;
pub mod conformal;
mod error;
pub mod ingest;
pub mod lossopt;
pub mod perturb;
pub mod prob;
pub mod rng;
pub mod seqmodel;

pub use error::{Error, Result};
