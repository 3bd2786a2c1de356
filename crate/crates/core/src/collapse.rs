//! Collapsing functions, the pushforward classifier, and plurality votes.
//!
//! A collapsing function assigns every sequence to one of `K` classes.
//! Pushing a sequence distribution forward through it yields the induced
//! categorical predictor; its argmax and max are the semantic prediction
//! and confidence. The equivalent 0/1 collapsing matrix is kept as an
//! independent linear-algebra route for oracle checks.

use serde::{Deserialize, Serialize};

use crate::prob::CategoricalDistribution;
use crate::seqmodel::SequenceDistribution;
use crate::{Error, Result};

/// A total map from sequence index to class in `[K]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollapsingFunction {
    num_classes: usize,
    assignment: Vec<usize>,
}

impl CollapsingFunction {
    pub fn new(num_classes: usize, assignment: Vec<usize>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidParameter {
                what: "collapsing function needs at least one class".to_string(),
            });
        }
        if assignment.is_empty() {
            return Err(Error::EmptyInput {
                what: "collapsing assignment",
            });
        }
        if let Some(&bad) = assignment.iter().find(|&&k| k >= num_classes) {
            return Err(Error::InvalidParameter {
                what: format!("class id {bad} out of range for {num_classes} classes"),
            });
        }
        Ok(Self {
            num_classes,
            assignment,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_sequences(&self) -> usize {
        self.assignment.len()
    }

    pub fn class_of(&self, sequence_index: usize) -> usize {
        self.assignment[sequence_index]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }
}

/// 0/1 matrix form of a collapsing function: `[B]_{k,z} = 1 iff B(z) = k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollapsingMatrix {
    num_classes: usize,
    num_sequences: usize,
    /// Row-major entries.
    data: Vec<u8>,
}

impl CollapsingMatrix {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_sequences(&self) -> usize {
        self.num_sequences
    }

    pub fn entry(&self, class: usize, sequence: usize) -> u8 {
        self.data[class * self.num_sequences + sequence]
    }

    /// `B · v`: collapse a sequence-indexed vector to a class-indexed one.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.num_sequences {
            return Err(Error::DimensionMismatch {
                left: v.len(),
                right: self.num_sequences,
            });
        }
        Ok((0..self.num_classes)
            .map(|k| {
                let row = &self.data[k * self.num_sequences..(k + 1) * self.num_sequences];
                row.iter()
                    .zip(v)
                    .map(|(&b, &x)| if b == 1 { x } else { 0.0 })
                    .sum()
            })
            .collect())
    }

    /// `Bᵀ · u`: lift a class-indexed vector to sequence space, so entry `z`
    /// becomes `u[B(z)]`.
    pub fn transpose_mul(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                left: u.len(),
                right: self.num_classes,
            });
        }
        Ok((0..self.num_sequences)
            .map(|z| {
                (0..self.num_classes)
                    .map(|k| if self.entry(k, z) == 1 { u[k] } else { 0.0 })
                    .sum()
            })
            .collect())
    }
}

/// Matrix form of `b`; `pushforward(p, b)` equals `as_matrix(b) · p`.
pub fn as_matrix(b: &CollapsingFunction) -> CollapsingMatrix {
    let num_classes = b.num_classes();
    let num_sequences = b.num_sequences();
    let mut data = vec![0u8; num_classes * num_sequences];
    for (z, &k) in b.assignment().iter().enumerate() {
        data[k * num_sequences + z] = 1;
    }
    CollapsingMatrix {
        num_classes,
        num_sequences,
        data,
    }
}

/// Sum the probability of every sequence in each class:
/// `result[k] = Σ_{z : B(z) = k} p[z]`.
pub fn pushforward(
    p: &SequenceDistribution,
    b: &CollapsingFunction,
) -> Result<CategoricalDistribution> {
    if p.num_sequences() != b.num_sequences() {
        return Err(Error::DimensionMismatch {
            left: p.num_sequences(),
            right: b.num_sequences(),
        });
    }
    let mut mass = vec![0.0f64; b.num_classes()];
    for (z, &prob) in p.probs().iter().enumerate() {
        mass[b.class_of(z)] += prob;
    }
    CategoricalDistribution::new(mass)
}

/// A class distribution together with its argmax and max value.
///
/// `top_class` attains the maximum of `distribution` with ties broken toward
/// the smallest class index; `confidence = distribution[top_class]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticPrediction {
    pub distribution: CategoricalDistribution,
    pub top_class: usize,
    pub confidence: f64,
}

impl SemanticPrediction {
    pub fn from_distribution(distribution: CategoricalDistribution) -> Self {
        let top_class = distribution.argmax();
        let confidence = distribution.prob(top_class);
        Self {
            distribution,
            top_class,
            confidence,
        }
    }
}

/// Exact semantic prediction of a sequence distribution under `b`.
pub fn semantic_prediction(
    p: &SequenceDistribution,
    b: &CollapsingFunction,
) -> Result<SemanticPrediction> {
    Ok(SemanticPrediction::from_distribution(pushforward(p, b)?))
}

/// Empirical semantic prediction from sampled class ids: the distribution is
/// the vector of sample frequencies, and the plurality class follows the
/// same smallest-index tie rule as the exact path.
pub fn plurality_from_samples(samples: &[usize]) -> Result<SemanticPrediction> {
    let max_class = *samples.iter().max().ok_or(Error::EmptyInput {
        what: "class samples",
    })?;
    let mut counts = vec![0usize; max_class + 1];
    for &s in samples {
        counts[s] += 1;
    }
    let n = samples.len() as f64;
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    Ok(SemanticPrediction::from_distribution(
        CategoricalDistribution::new(freqs)?,
    ))
}
