//! Exact-arithmetic probability primitives shared by all other modules.
//!
//! Probabilities are stored in linear space as 64-bit floats; log space is
//! used only inside [`log_sum_exp`] and [`softmax`]. All operations are pure
//! functions on immutable values.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance for the simplex sum invariant.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A point of the probability simplex over `K` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoricalDistribution {
    probs: Vec<f64>,
}

impl CategoricalDistribution {
    /// Validating constructor: entries must be nonnegative and sum to 1
    /// within [`SIMPLEX_TOL`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput {
                what: "categorical distribution",
            });
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    what: "categorical probability",
                });
            }
            if p < 0.0 {
                return Err(Error::NegativeProbability { index: i, value: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotNormalized {
                sum,
                tol: SIMPLEX_TOL,
            });
        }
        Ok(Self { probs })
    }

    /// Renormalizing constructor for nonnegative weights with positive total.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput {
                what: "categorical weights",
            });
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite {
                    what: "categorical weight",
                });
            }
            if w < 0.0 {
                return Err(Error::NegativeProbability { index: i, value: w });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateNormalizer);
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { probs })
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyInput {
                what: "uniform distribution dimension",
            });
        }
        Ok(Self {
            probs: vec![1.0 / k as f64; k],
        })
    }

    /// Point mass on `index`.
    pub fn point_mass(index: usize, dimension: usize) -> Result<Self> {
        let one_hot = OneHot::new(index, dimension)?;
        Ok(Self {
            probs: one_hot.to_vector(),
        })
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    /// Index of the largest entry, ties broken toward the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Elementwise natural log; entries must be strictly positive.
    pub fn ln_vector(&self) -> Result<LogitVector> {
        if self.probs.iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidParameter {
                what: "log of a distribution with zero entries".to_string(),
            });
        }
        LogitVector::new(self.probs.iter().map(|&p| p.ln()).collect())
    }
}

/// One-hot encoding of a class in `[K]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneHot {
    pub index: usize,
    pub dimension: usize,
}

impl OneHot {
    pub fn new(index: usize, dimension: usize) -> Result<Self> {
        if dimension == 0 || index >= dimension {
            return Err(Error::InvalidParameter {
                what: format!("one-hot index {index} out of range for dimension {dimension}"),
            });
        }
        Ok(Self { index, dimension })
    }

    pub fn to_vector(self) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        v[self.index] = 1.0;
        v
    }
}

/// A vector on the log-odds scale; all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput {
                what: "logit vector",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "logit entry",
            });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Numerically stable softmax; invariant under adding a constant to all
/// entries.
pub fn softmax(logits: &LogitVector) -> Result<CategoricalDistribution> {
    let max = logits
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.values().iter().map(|&z| (z - max).exp()).collect();
    CategoricalDistribution::normalized(exps)
}

/// KL divergence `KL(p ‖ q)` in nats, with the convention `0·log(0/q) = 0`.
///
/// Signals [`Error::InfiniteDivergence`] where `p` puts mass outside the
/// support of `q`.
pub fn kl_divergence(p: &CategoricalDistribution, q: &CategoricalDistribution) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            left: p.dim(),
            right: q.dim(),
        });
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::InfiniteDivergence { index: i });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total.max(0.0))
}

/// Shannon entropy in nats; `0 ≤ H(p) ≤ ln K`.
pub fn entropy(p: &CategoricalDistribution) -> f64 {
    let h: f64 = p
        .probs()
        .iter()
        .map(|&pi| if pi > 0.0 { -pi * pi.ln() } else { 0.0 })
        .sum();
    h.max(0.0)
}

/// `log Σ exp(zᵢ)` with max-subtraction, so large inputs do not overflow.
pub fn log_sum_exp(logits: &LogitVector) -> f64 {
    let max = logits
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.values().iter().map(|&z| (z - max).exp()).sum();
    max + sum.ln()
}
