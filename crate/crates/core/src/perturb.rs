//! Exponential tilting and its autoregressive token-level circuits.
//!
//! A tilt measure reweights a sequence distribution multiplicatively:
//! `(f ⋆ μ)[z] ∝ f[z]·e^{μ[z]}`. Two perturbation families are realized as
//! tilt measures: [`ConfidencePerturbation`] (a scalar weight on the top
//! class, driven by the confidence value) and [`FullPerturbation`] (one
//! weight per class, driven by the whole class distribution).
//!
//! The same perturbed distribution can be produced token-by-token: the
//! perturbed next-token probability is the original one reweighted by a
//! small circuit whose only extra inputs are the intermediate class
//! confidences of the unperturbed model. [`factorized_confidence_perturbation`]
//! and [`factorized_full_perturbation`] build the full sequence
//! distribution that way, which the tests compare against the direct tilt.

use crate::collapse::{pushforward, semantic_prediction, CollapsingFunction};
use crate::prob::CategoricalDistribution;
use crate::rng::CounterRng;
use crate::seqmodel::{SequenceDistribution, ToyAutoregressiveModel};
use crate::{Error, Result};

/// A log-weight per sequence index.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltMeasure {
    values: Vec<f64>,
}

impl TiltMeasure {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput {
                what: "tilt measure",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "tilt measure entry",
            });
        }
        Ok(Self { values })
    }

    pub fn zero(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Exponential tilting: `(f ⋆ μ)[z] = f[z]·e^{μ[z]} / Σ f[z']·e^{μ[z']}`.
pub fn tilt(f: &SequenceDistribution, mu: &TiltMeasure) -> Result<SequenceDistribution> {
    if f.num_sequences() != mu.len() {
        return Err(Error::DimensionMismatch {
            left: f.num_sequences(),
            right: mu.len(),
        });
    }
    // Shift by the max attained log-weight so huge measures cannot overflow.
    let shift = f
        .probs()
        .iter()
        .zip(mu.values())
        .filter(|(&p, _)| p > 0.0)
        .map(|(_, &m)| m)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::DegenerateNormalizer);
    }
    let weights: Vec<f64> = f
        .probs()
        .iter()
        .zip(mu.values())
        .map(|(&p, &m)| if p > 0.0 { p * (m - shift).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::DegenerateNormalizer);
    }
    SequenceDistribution::new(
        f.vocab_size(),
        f.length(),
        weights.into_iter().map(|w| w / total).collect(),
    )
}

/// A confidence remapping `τ: [0,1] → [−1,1]`, stored as a piecewise-constant
/// table: `τ(v)` is the value of the last breakpoint at or below `v`, or the
/// default when `v` lies below every breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidencePerturbation {
    /// `(confidence breakpoint, value)`, strictly increasing in confidence.
    breakpoints: Vec<(f64, f64)>,
    default: f64,
}

impl ConfidencePerturbation {
    pub fn new(mut breakpoints: Vec<(f64, f64)>, default: f64) -> Result<Self> {
        breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in breakpoints.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidParameter {
                    what: format!("duplicate confidence breakpoint {}", pair[0].0),
                });
            }
        }
        for &(v, t) in &breakpoints {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter {
                    what: format!("confidence breakpoint {v} outside [0, 1]"),
                });
            }
            check_tau(t)?;
        }
        check_tau(default)?;
        Ok(Self {
            breakpoints,
            default,
        })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(Vec::new(), value)
    }

    pub fn zero() -> Self {
        Self::constant(0.0).expect("zero is in range")
    }

    /// Random table for fixture sweeps: up to three breakpoints, all values
    /// uniform in [−1, 1].
    pub fn random(key: u64) -> Self {
        let mut rng = CounterRng::new(key);
        let num_breaks = rng.next_below(4);
        let breakpoints: Vec<(f64, f64)> = (0..num_breaks)
            .map(|_| (rng.next_f64(), 2.0 * rng.next_f64() - 1.0))
            .collect();
        let default = 2.0 * rng.next_f64() - 1.0;
        Self::new(breakpoints, default).expect("random values are in range")
    }

    pub fn tau(&self, confidence: f64) -> f64 {
        let mut value = self.default;
        for &(v, t) in &self.breakpoints {
            if v <= confidence {
                value = t;
            } else {
                break;
            }
        }
        value
    }
}

fn check_tau(t: f64) -> Result<()> {
    if !t.is_finite() || t.abs() > 1.0 {
        return Err(Error::InvalidParameter {
            what: format!("tau value {t} outside [-1, 1]"),
        });
    }
    Ok(())
}

/// A class-distribution remapping `τ: Δ_K → [−1,1]^K`, stored as explicit
/// values on finitely many reference predictions (matched bit-exactly) plus
/// a default vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPerturbation {
    entries: Vec<(Vec<f64>, Vec<f64>)>,
    default: Vec<f64>,
}

impl FullPerturbation {
    pub fn new(entries: Vec<(Vec<f64>, Vec<f64>)>, default: Vec<f64>) -> Result<Self> {
        if default.is_empty() {
            return Err(Error::EmptyInput {
                what: "full perturbation default",
            });
        }
        for t in &default {
            check_tau(*t)?;
        }
        for (reference, value) in &entries {
            if reference.len() != default.len() || value.len() != default.len() {
                return Err(Error::DimensionMismatch {
                    left: reference.len().max(value.len()),
                    right: default.len(),
                });
            }
            for t in value {
                check_tau(*t)?;
            }
        }
        Ok(Self { entries, default })
    }

    pub fn constant(value: Vec<f64>) -> Result<Self> {
        Self::new(Vec::new(), value)
    }

    pub fn zero(num_classes: usize) -> Self {
        Self::constant(vec![0.0; num_classes]).expect("zero vector is in range")
    }

    /// Random constant table; on any single question a constant map is as
    /// general as an arbitrary one, since only the attained prediction
    /// matters.
    pub fn random(num_classes: usize, key: u64) -> Self {
        let mut rng = CounterRng::new(key);
        let value: Vec<f64> = (0..num_classes)
            .map(|_| 2.0 * rng.next_f64() - 1.0)
            .collect();
        Self::constant(value).expect("random values are in range")
    }

    /// The member of the full family that reproduces a confidence
    /// perturbation on the given reference predictions:
    /// `τ_vec(π) = τ(π[k*])·e_{k*}`.
    pub fn matching_confidence(
        w: &ConfidencePerturbation,
        references: &[CategoricalDistribution],
    ) -> Result<Self> {
        let num_classes = references
            .first()
            .ok_or(Error::EmptyInput {
                what: "reference predictions",
            })?
            .dim();
        let entries = references
            .iter()
            .map(|pi| {
                let top = pi.argmax();
                let mut value = vec![0.0; num_classes];
                value[top] = w.tau(pi.prob(top));
                (pi.probs().to_vec(), value)
            })
            .collect();
        Self::new(entries, vec![0.0; num_classes])
    }

    pub fn num_classes(&self) -> usize {
        self.default.len()
    }

    pub fn tau(&self, prediction: &CategoricalDistribution) -> &[f64] {
        for (reference, value) in &self.entries {
            if reference.len() == prediction.dim()
                && reference
                    .iter()
                    .zip(prediction.probs())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
            {
                return value;
            }
        }
        &self.default
    }
}

/// Either perturbation family, realized over sequences on demand.
#[derive(Debug, Clone)]
pub enum Perturbation {
    Confidence(ConfidencePerturbation),
    Full(FullPerturbation),
}

impl Perturbation {
    pub fn realize(
        &self,
        p: &SequenceDistribution,
        b: &CollapsingFunction,
    ) -> Result<TiltMeasure> {
        match self {
            Perturbation::Confidence(w) => realize_confidence_perturbation(w, p, b),
            Perturbation::Full(w) => realize_full_perturbation(w, p, b),
        }
    }
}

/// `values[z] = τ(v*)·1{B(z) = k*}` with `(k*, v*)` the semantic prediction
/// of `p` under `b`.
pub fn realize_confidence_perturbation(
    w: &ConfidencePerturbation,
    p: &SequenceDistribution,
    b: &CollapsingFunction,
) -> Result<TiltMeasure> {
    let pred = semantic_prediction(p, b)?;
    let t = w.tau(pred.confidence);
    TiltMeasure::new(
        (0..b.num_sequences())
            .map(|z| if b.class_of(z) == pred.top_class { t } else { 0.0 })
            .collect(),
    )
}

/// `values[z] = τ(π)[B(z)]` with `π` the pushforward of `p` under `b`.
pub fn realize_full_perturbation(
    w: &FullPerturbation,
    p: &SequenceDistribution,
    b: &CollapsingFunction,
) -> Result<TiltMeasure> {
    if w.num_classes() != b.num_classes() {
        return Err(Error::DimensionMismatch {
            left: w.num_classes(),
            right: b.num_classes(),
        });
    }
    let pi = pushforward(p, b)?;
    let value = w.tau(&pi);
    TiltMeasure::new((0..b.num_sequences()).map(|z| value[b.class_of(z)]).collect())
}

/// Class distributions conditioned on every prefix of the model.
///
/// `vector(i, prefix)` is the probability of each class for the eventual
/// full sequence, given the length-`i` prefix; at `i = N` it is the one-hot
/// of the completed sequence's class, and at `i = 0` it is the model's
/// overall class distribution. `scalar` is the top-class coordinate.
#[derive(Debug, Clone)]
pub struct IntermediateConfidence {
    top_class: usize,
    num_classes: usize,
    levels: Vec<Vec<Vec<f64>>>,
}

impl IntermediateConfidence {
    pub fn top_class(&self) -> usize {
        self.top_class
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Class distribution given the prefix with encoded index `prefix_index`
    /// at length `prefix_len`.
    pub fn vector(&self, prefix_len: usize, prefix_index: usize) -> &[f64] {
        &self.levels[prefix_len][prefix_index]
    }

    /// Probability of eventually landing in the model's top class.
    pub fn scalar(&self, prefix_len: usize, prefix_index: usize) -> f64 {
        self.levels[prefix_len][prefix_index][self.top_class]
    }

    /// The empty-prefix class distribution.
    pub fn g0(&self) -> &[f64] {
        &self.levels[0][0]
    }
}

/// Backward recursion over the prefix tree: the class distribution at a
/// prefix is the conditional mixture of the distributions at its one-token
/// extensions; full-length prefixes are one-hot in their own class.
pub fn intermediate_confidences(
    m: &ToyAutoregressiveModel,
    b: &CollapsingFunction,
) -> Result<IntermediateConfidence> {
    if b.num_sequences() != m.num_sequences() {
        return Err(Error::DimensionMismatch {
            left: b.num_sequences(),
            right: m.num_sequences(),
        });
    }
    let num_classes = b.num_classes();
    let vocab = m.vocab_size();
    let length = m.length();
    let top_class = semantic_prediction(&m.enumerate_distribution(), b)?.top_class;

    let mut levels: Vec<Vec<Vec<f64>>> = vec![Vec::new(); length + 1];
    levels[length] = (0..m.num_sequences())
        .map(|z| {
            let mut one_hot = vec![0.0; num_classes];
            one_hot[b.class_of(z)] = 1.0;
            one_hot
        })
        .collect();
    for level in (0..length).rev() {
        let prefix_count = levels[level + 1].len() / vocab;
        let mut current = Vec::with_capacity(prefix_count);
        for prefix_idx in 0..prefix_count {
            let cond = m.conditional_at(level, prefix_idx);
            let mut mix = vec![0.0; num_classes];
            for token in 0..vocab {
                let child = &levels[level + 1][prefix_idx * vocab + token];
                let p = cond.prob(token);
                for (slot, &g) in mix.iter_mut().zip(child) {
                    *slot += p * g;
                }
            }
            current.push(mix);
        }
        levels[level] = current;
    }
    Ok(IntermediateConfidence {
        top_class,
        num_classes,
        levels,
    })
}

/// Scalar circuit: the unnormalized perturbed weight of one candidate token,
/// `a · (1 + (e^{τ(v*)} − 1)·g_next)`.
pub fn circuit_next_token_confidence(
    a: f64,
    g_next: f64,
    v_star: f64,
    w: &ConfidencePerturbation,
) -> f64 {
    a * (1.0 + (w.tau(v_star).exp() - 1.0) * g_next)
}

/// Vector circuit: `a · Σ_b e^{τ(g0)[b]} · g_vec[b]`.
pub fn circuit_next_token_full(
    a: f64,
    g_vec: &[f64],
    g0: &CategoricalDistribution,
    w: &FullPerturbation,
) -> f64 {
    let tau = w.tau(g0);
    a * tau
        .iter()
        .zip(g_vec)
        .map(|(&t, &g)| t.exp() * g)
        .sum::<f64>()
}

/// Build the perturbed sequence distribution token-by-token from the scalar
/// circuit, normalizing the candidate weights at every step.
pub fn factorized_confidence_perturbation(
    m: &ToyAutoregressiveModel,
    b: &CollapsingFunction,
    w: &ConfidencePerturbation,
) -> Result<SequenceDistribution> {
    let pred = semantic_prediction(&m.enumerate_distribution(), b)?;
    let inter = intermediate_confidences(m, b)?;
    factorize(m, |level, prefix_idx, token, a| {
        let g_next = inter.scalar(level + 1, prefix_idx * m.vocab_size() + token);
        circuit_next_token_confidence(a, g_next, pred.confidence, w)
    })
}

/// Build the perturbed sequence distribution token-by-token from the vector
/// circuit.
pub fn factorized_full_perturbation(
    m: &ToyAutoregressiveModel,
    b: &CollapsingFunction,
    w: &FullPerturbation,
) -> Result<SequenceDistribution> {
    if w.num_classes() != b.num_classes() {
        return Err(Error::DimensionMismatch {
            left: w.num_classes(),
            right: b.num_classes(),
        });
    }
    let g0 = pushforward(&m.enumerate_distribution(), b)?;
    let inter = intermediate_confidences(m, b)?;
    factorize(m, |level, prefix_idx, token, a| {
        let g_vec = inter.vector(level + 1, prefix_idx * m.vocab_size() + token);
        circuit_next_token_full(a, g_vec, &g0, w)
    })
}

fn factorize<F>(m: &ToyAutoregressiveModel, weight: F) -> Result<SequenceDistribution>
where
    F: Fn(usize, usize, usize, f64) -> f64,
{
    let vocab = m.vocab_size();
    let mut joint = vec![1.0f64];
    for level in 0..m.length() {
        let mut next = vec![0.0f64; joint.len() * vocab];
        for (prefix_idx, &prefix_prob) in joint.iter().enumerate() {
            let cond = m.conditional_at(level, prefix_idx);
            let weights: Vec<f64> = (0..vocab)
                .map(|token| weight(level, prefix_idx, token, cond.prob(token)))
                .collect();
            let total: f64 = weights.iter().sum();
            if !(total.is_finite() && total > 0.0) {
                return Err(Error::DegenerateNormalizer);
            }
            for (token, &wt) in weights.iter().enumerate() {
                next[prefix_idx * vocab + token] = prefix_prob * (wt / total);
            }
        }
        joint = next;
    }
    SequenceDistribution::new(m.vocab_size(), m.length(), joint)
}

/// Ratio of lookahead expectations at one decoding step:
/// `E_{z over prefix·token}[e^{w(z)}] / E_{z over prefix}[e^{w(z)}]`.
/// Multiplying the model's next-token probability by this ratio gives the
/// perturbed conditional exactly.
pub fn lookahead_ratio(
    m: &ToyAutoregressiveModel,
    b: &CollapsingFunction,
    w: &Perturbation,
    prefix: &[usize],
    token: usize,
) -> Result<f64> {
    if prefix.len() >= m.length() {
        return Err(Error::PrefixOutOfRange {
            len: prefix.len(),
            max: m.length(),
        });
    }
    if token >= m.vocab_size() {
        return Err(Error::TokenOutOfRange {
            token,
            vocab: m.vocab_size(),
        });
    }
    let base = m.enumerate_distribution();
    let mu = w.realize(&base, b)?;
    let extended: Vec<usize> = prefix.iter().copied().chain([token]).collect();
    let numerator = conditional_tilt_expectation(&base, mu.values(), &extended, m.vocab_size())?;
    let denominator = conditional_tilt_expectation(&base, mu.values(), prefix, m.vocab_size())?;
    Ok(numerator / denominator)
}

/// Worst-case lookahead identity error over every (prefix, token) pair:
/// `max |m(token|prefix)·ratio − (p ⋆ w)(token|prefix)|`, with the ratio of
/// lookahead expectations and the perturbed conditionals both computed from
/// one backward aggregation pass. Prefixes the model cannot reach are
/// skipped.
pub fn max_lookahead_identity_error(
    m: &ToyAutoregressiveModel,
    b: &CollapsingFunction,
    w: &Perturbation,
) -> Result<f64> {
    let base = m.enumerate_distribution();
    let mu = w.realize(&base, b)?;
    let vocab = m.vocab_size();
    let length = m.length();
    // tilted_mass[prefix] = Σ_{z ⊇ prefix} p(z)·e^{μ(z)},
    // base_mass[prefix]   = Σ_{z ⊇ prefix} p(z), per level.
    let mut tilted_levels: Vec<Vec<f64>> = vec![Vec::new(); length + 1];
    let mut base_levels: Vec<Vec<f64>> = vec![Vec::new(); length + 1];
    tilted_levels[length] = base
        .probs()
        .iter()
        .zip(mu.values())
        .map(|(&p, &v)| p * v.exp())
        .collect();
    base_levels[length] = base.probs().to_vec();
    for level in (0..length).rev() {
        let children_t = &tilted_levels[level + 1];
        let children_b = &base_levels[level + 1];
        let count = children_t.len() / vocab;
        tilted_levels[level] = (0..count)
            .map(|i| children_t[i * vocab..(i + 1) * vocab].iter().sum())
            .collect();
        base_levels[level] = (0..count)
            .map(|i| children_b[i * vocab..(i + 1) * vocab].iter().sum())
            .collect();
    }
    let mut worst: f64 = 0.0;
    for level in 0..length {
        for prefix_idx in 0..base_levels[level].len() {
            let base_mass = base_levels[level][prefix_idx];
            if base_mass <= 0.0 {
                continue;
            }
            let tilted_mass = tilted_levels[level][prefix_idx];
            let cond = m.conditional_at(level, prefix_idx);
            for token in 0..vocab {
                let child = prefix_idx * vocab + token;
                let child_base = base_levels[level + 1][child];
                if child_base <= 0.0 {
                    continue;
                }
                let child_tilted = tilted_levels[level + 1][child];
                let ratio = (child_tilted / child_base) / (tilted_mass / base_mass);
                let perturbed_conditional = child_tilted / tilted_mass;
                worst = worst.max((cond.prob(token) * ratio - perturbed_conditional).abs());
            }
        }
    }
    Ok(worst)
}

/// `E[e^{μ(z)} | z extends prefix]` under a sequence distribution.
fn conditional_tilt_expectation(
    p: &SequenceDistribution,
    mu: &[f64],
    prefix: &[usize],
    vocab: usize,
) -> Result<f64> {
    let mut stride = 1usize;
    for _ in 0..(p.length() - prefix.len()) {
        stride *= vocab;
    }
    let start = crate::seqmodel::sequence_index(prefix, vocab) * stride;
    let mut mass = 0.0;
    let mut weighted = 0.0;
    for (&pz, &m) in p.probs()[start..start + stride]
        .iter()
        .zip(&mu[start..start + stride])
    {
        mass += pz;
        weighted += pz * m.exp();
    }
    if mass <= 0.0 {
        return Err(Error::DegenerateNormalizer);
    }
    Ok(weighted / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::seqmodel::{random_collapse, random_model};

    fn seq_dist(probs: &[f64]) -> SequenceDistribution {
        SequenceDistribution::new(probs.len(), 1, probs.to_vec()).unwrap()
    }

    fn random_fixture(seed: u64) -> (ToyAutoregressiveModel, CollapsingFunction) {
        let mut rng = CounterRng::new(seed);
        let vocab = 2 + rng.next_below(4);
        let length = 1 + rng.next_below(4);
        let n = crate::seqmodel::num_sequences(vocab, length).unwrap();
        let classes = 1 + rng.next_below(4.min(n));
        let m = random_model(vocab, length, rng::derive_key(seed, &[1])).unwrap();
        let b = random_collapse(n, classes, rng::derive_key(seed, &[2])).unwrap();
        (m, b)
    }

    #[test]
    fn zero_measure_leaves_distribution_unchanged() {
        let f = seq_dist(&[0.1, 0.2, 0.3, 0.4]);
        let out = tilt(&f, &TiltMeasure::zero(4)).unwrap();
        for z in 0..4 {
            assert!((out.prob(z) - f.prob(z)).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_measure_leaves_distribution_unchanged() {
        let f = seq_dist(&[0.1, 0.2, 0.3, 0.4]);
        let mu = TiltMeasure::new(vec![5.5; 4]).unwrap();
        let out = tilt(&f, &mu).unwrap();
        for z in 0..4 {
            assert!((out.prob(z) - f.prob(z)).abs() < 1e-14);
        }
    }

    #[test]
    fn tilt_hand_example() {
        let f = seq_dist(&[0.5, 0.5]);
        let mu = TiltMeasure::new(vec![3f64.ln(), 0.0]).unwrap();
        let out = tilt(&f, &mu).unwrap();
        assert!((out.prob(0) - 0.75).abs() < 1e-14);
        assert!((out.prob(1) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn tilt_survives_huge_measures() {
        let f = seq_dist(&[0.5, 0.5]);
        let mu = TiltMeasure::new(vec![4000.0, 4000.0 + 3f64.ln()]).unwrap();
        let out = tilt(&f, &mu).unwrap();
        assert!((out.prob(0) - 0.25).abs() < 1e-12);
        assert!((out.prob(1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_tau_realizes_the_zero_measure() {
        let p = seq_dist(&[0.3, 0.4, 0.3]);
        let b = CollapsingFunction::new(2, vec![0, 0, 1]).unwrap();
        let mu = realize_confidence_perturbation(&ConfidencePerturbation::zero(), &p, &b).unwrap();
        assert_eq!(mu.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_tau_marks_the_top_class() {
        let p = seq_dist(&[0.3, 0.4, 0.3]);
        let b = CollapsingFunction::new(2, vec![0, 0, 1]).unwrap();
        let w = ConfidencePerturbation::constant(1.0).unwrap();
        let mu = realize_confidence_perturbation(&w, &p, &b).unwrap();
        assert_eq!(mu.values(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn positive_tau_raises_the_top_class_mass() {
        for seed in 0..20u64 {
            let (m, b) = random_fixture(900 + seed);
            let p = m.enumerate_distribution();
            let pred = semantic_prediction(&p, &b).unwrap();
            if pred.confidence >= 1.0 - 1e-12 {
                continue;
            }
            let w = ConfidencePerturbation::constant(0.8).unwrap();
            let mu = realize_confidence_perturbation(&w, &p, &b).unwrap();
            let tilted = tilt(&p, &mu).unwrap();
            let new_mass = pushforward(&tilted, &b).unwrap().prob(pred.top_class);
            assert!(
                new_mass > pred.confidence,
                "seed {seed}: {new_mass} vs {}",
                pred.confidence
            );
        }
    }

    #[test]
    fn full_realization_matches_the_componentwise_rule() {
        let p = seq_dist(&[0.3, 0.4, 0.3]);
        let b = CollapsingFunction::new(2, vec![0, 0, 1]).unwrap();
        let w = FullPerturbation::constant(vec![1.0, -1.0]).unwrap();
        let mu = realize_full_perturbation(&w, &p, &b).unwrap();
        assert_eq!(mu.values(), &[1.0, 1.0, -1.0]);

        let zero = FullPerturbation::zero(2);
        let mu0 = realize_full_perturbation(&zero, &p, &b).unwrap();
        assert_eq!(mu0.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn full_realization_equals_matrix_transpose_route() {
        for seed in 0..20u64 {
            let (m, b) = random_fixture(1200 + seed);
            let p = m.enumerate_distribution();
            let w = FullPerturbation::random(b.num_classes(), 31 * seed + 7);
            let mu = realize_full_perturbation(&w, &p, &b).unwrap();
            let pi = pushforward(&p, &b).unwrap();
            let lifted = crate::collapse::as_matrix(&b)
                .transpose_mul(w.tau(&pi))
                .unwrap();
            assert_eq!(mu.values(), &lifted[..], "seed {seed}");
        }
    }

    #[test]
    fn intermediate_confidences_boundary_cases() {
        let (m, b) = random_fixture(2024);
        let inter = intermediate_confidences(&m, &b).unwrap();
        let n = m.num_sequences();
        for z in 0..n {
            let expected = if b.class_of(z) == inter.top_class() {
                1.0
            } else {
                0.0
            };
            assert_eq!(inter.scalar(m.length(), z), expected);
        }
    }

    #[test]
    fn intermediate_confidences_match_enumeration_oracle() {
        for seed in 0..15u64 {
            let (m, b) = random_fixture(3000 + seed);
            let inter = intermediate_confidences(&m, &b).unwrap();
            let d = m.enumerate_distribution();
            let vocab = m.vocab_size();
            let length = m.length();
            let mut prefix_count = 1usize;
            for level in 0..=length {
                let stride = m.num_sequences() / prefix_count;
                for prefix_idx in 0..prefix_count {
                    let start = prefix_idx * stride;
                    let mut mass = 0.0;
                    let mut class_mass = vec![0.0; b.num_classes()];
                    for z in start..start + stride {
                        mass += d.prob(z);
                        class_mass[b.class_of(z)] += d.prob(z);
                    }
                    for (k, &cm) in class_mass.iter().enumerate() {
                        assert!(
                            (inter.vector(level, prefix_idx)[k] - cm / mass).abs() < 1e-12,
                            "seed {seed} level {level} prefix {prefix_idx} class {k}"
                        );
                    }
                }
                prefix_count *= vocab;
            }
        }
    }

    #[test]
    fn circuit_weight_degenerates_to_original_probability() {
        let w = ConfidencePerturbation::zero();
        assert_eq!(circuit_next_token_confidence(0.37, 0.9, 0.6, &w), 0.37);
        let w = ConfidencePerturbation::constant(0.8).unwrap();
        assert_eq!(circuit_next_token_confidence(0.37, 0.0, 0.6, &w), 0.37);
    }

    #[test]
    fn full_circuit_weight_degenerates_when_tau_is_zero() {
        let g0 = CategoricalDistribution::new(vec![0.6, 0.4]).unwrap();
        let w = FullPerturbation::zero(2);
        let weight = circuit_next_token_full(0.41, &[0.3, 0.7], &g0, &w);
        assert!((weight - 0.41).abs() < 1e-15);
    }

    #[test]
    fn scalar_circuit_reproduces_the_sequence_level_tilt() {
        for seed in 0..25u64 {
            let (m, b) = random_fixture(4000 + seed);
            let w = ConfidencePerturbation::random(77 * seed + 3);
            let p = m.enumerate_distribution();
            let mu = realize_confidence_perturbation(&w, &p, &b).unwrap();
            let direct = tilt(&p, &mu).unwrap();
            let factorized = factorized_confidence_perturbation(&m, &b, &w).unwrap();
            let tv = direct.total_variation(&factorized).unwrap();
            assert!(tv <= 1e-9, "seed {seed}: tv = {tv:e}");
        }
    }

    #[test]
    fn vector_circuit_reproduces_the_sequence_level_tilt() {
        for seed in 0..25u64 {
            let (m, b) = random_fixture(5000 + seed);
            let w = FullPerturbation::random(b.num_classes(), 91 * seed + 5);
            let p = m.enumerate_distribution();
            let mu = realize_full_perturbation(&w, &p, &b).unwrap();
            let direct = tilt(&p, &mu).unwrap();
            let factorized = factorized_full_perturbation(&m, &b, &w).unwrap();
            let tv = direct.total_variation(&factorized).unwrap();
            assert!(tv <= 1e-9, "seed {seed}: tv = {tv:e}");
        }
    }

    #[test]
    fn single_class_full_perturbation_is_a_no_op() {
        let m = random_model(3, 2, 60).unwrap();
        let b = CollapsingFunction::new(1, vec![0; 9]).unwrap();
        let w = FullPerturbation::constant(vec![0.7]).unwrap();
        let p = m.enumerate_distribution();
        let tilted = tilt(&p, &realize_full_perturbation(&w, &p, &b).unwrap()).unwrap();
        let tv = p.total_variation(&tilted).unwrap();
        assert!(tv < 1e-14);
    }

    #[test]
    fn lookahead_ratio_is_one_for_zero_perturbations() {
        let (m, b) = random_fixture(6100);
        let w = Perturbation::Confidence(ConfidencePerturbation::zero());
        let r = lookahead_ratio(&m, &b, &w, &[], 0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lookahead_ratio_closed_form_at_length_one() {
        let m = random_model(3, 1, 61).unwrap();
        let b = CollapsingFunction::new(2, vec![0, 1, 0]).unwrap();
        let conf = ConfidencePerturbation::constant(0.6).unwrap();
        let p = m.enumerate_distribution();
        let mu = realize_confidence_perturbation(&conf, &p, &b).unwrap();
        let w = Perturbation::Confidence(conf);
        for token in 0..3 {
            let r = lookahead_ratio(&m, &b, &w, &[], token).unwrap();
            let denom: f64 = (0..3).map(|z| p.prob(z) * mu.values()[z].exp()).sum();
            let expected = mu.values()[token].exp() / denom;
            assert!((r - expected).abs() < 1e-12, "token {token}");
        }
    }

    #[test]
    fn lookahead_product_identity_recovers_perturbed_conditionals() {
        for seed in 0..10u64 {
            let (m, b) = random_fixture(7000 + seed);
            let conf = ConfidencePerturbation::random(13 * seed + 1);
            let p = m.enumerate_distribution();
            let mu = realize_confidence_perturbation(&conf, &p, &b).unwrap();
            let tilted = tilt(&p, &mu).unwrap();
            let w = Perturbation::Confidence(conf);
            let vocab = m.vocab_size();
            // Check the first decoding step and one deeper step.
            for token in 0..vocab {
                let lhs = m.conditional_next(&[]).unwrap().prob(token)
                    * lookahead_ratio(&m, &b, &w, &[], token).unwrap();
                let marginal: f64 = (0..m.num_sequences())
                    .filter(|z| crate::seqmodel::decode_sequence(*z, vocab, m.length())[0] == token)
                    .map(|z| tilted.prob(z))
                    .sum();
                assert!((lhs - marginal).abs() < 1e-10, "seed {seed} token {token}");
            }
        }
    }

    #[test]
    fn aggregated_lookahead_check_agrees_with_the_direct_ratio() {
        for seed in 0..8u64 {
            let (m, b) = random_fixture(7600 + seed);
            let conf = ConfidencePerturbation::random(17 * seed + 9);
            let w = Perturbation::Confidence(conf);
            let err = max_lookahead_identity_error(&m, &b, &w).unwrap();
            assert!(err <= 1e-12, "seed {seed}: err = {err:e}");
            // Spot-check: the aggregated ratios equal the definitional op.
            let base = m.enumerate_distribution();
            let tilted = tilt(&base, &w.realize(&base, &b).unwrap()).unwrap();
            for token in 0..m.vocab_size() {
                let ratio = lookahead_ratio(&m, &b, &w, &[], token).unwrap();
                let lhs = m.conditional_next(&[]).unwrap().prob(token) * ratio;
                let stride = m.num_sequences() / m.vocab_size();
                let rhs: f64 = (token * stride..(token + 1) * stride)
                    .map(|z| tilted.prob(z))
                    .sum();
                assert!((lhs - rhs).abs() <= 1e-12, "seed {seed} token {token}");
            }
        }
    }

    #[test]
    fn matching_full_perturbation_realizes_the_confidence_measure() {
        for seed in 0..10u64 {
            let (m, b) = random_fixture(8000 + seed);
            let p = m.enumerate_distribution();
            let pi = pushforward(&p, &b).unwrap();
            let conf = ConfidencePerturbation::random(5 * seed + 2);
            let full = FullPerturbation::matching_confidence(&conf, &[pi]).unwrap();
            let mu_conf = realize_confidence_perturbation(&conf, &p, &b).unwrap();
            let mu_full = realize_full_perturbation(&full, &p, &b).unwrap();
            assert_eq!(mu_conf.values(), mu_full.values(), "seed {seed}");
        }
    }

    #[test]
    fn tau_lookup_is_piecewise_constant() {
        let w = ConfidencePerturbation::new(vec![(0.3, 0.5), (0.7, -0.25)], 0.1).unwrap();
        assert_eq!(w.tau(0.0), 0.1);
        assert_eq!(w.tau(0.3), 0.5);
        assert_eq!(w.tau(0.57), 0.5);
        assert_eq!(w.tau(0.7), -0.25);
        assert_eq!(w.tau(1.0), -0.25);
    }

    #[test]
    fn perturbation_values_outside_the_box_are_rejected() {
        assert!(ConfidencePerturbation::constant(1.5).is_err());
        assert!(FullPerturbation::constant(vec![0.0, -1.01]).is_err());
        assert!(ConfidencePerturbation::new(vec![(0.5, 0.0), (0.5, 0.1)], 0.0).is_err());
    }
}
