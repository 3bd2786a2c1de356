//! Exactly enumerable toy autoregressive sequence models and question
//! distributions.
//!
//! A [`ToyAutoregressiveModel`] stores one conditional next-token
//! distribution per prefix, so the induced distribution over all `|V|^N`
//! sequences can be enumerated exactly. A [`ToyInstance`] bundles a finite
//! question distribution with, per question, a model, a ground-truth
//! conditional sequence distribution, and a collapsing function. Instances
//! are the fixture substrate for every theorem check in this crate.
//!
//! Sequences of length `N` over vocabulary `[V]` are identified with their
//! base-`V` encoding (first token most significant).

use serde::{Deserialize, Serialize};

use crate::collapse::CollapsingFunction;
use crate::prob::CategoricalDistribution;
use crate::rng::{self, CounterRng};
use crate::{Error, Result};

/// Enumeration guard: `|V|^N` may not exceed this.
pub const MAX_SEQUENCES: usize = 1 << 20;

/// Tolerance for sequence-distribution normalization.
pub const SEQ_SUM_TOL: f64 = 1e-9;

/// `|V|^N`, checked against the enumeration guard.
pub fn num_sequences(vocab_size: usize, length: usize) -> Result<usize> {
    if vocab_size == 0 {
        return Err(Error::InvalidParameter {
            what: "vocabulary must be nonempty".to_string(),
        });
    }
    let mut n: u128 = 1;
    for _ in 0..length {
        n *= vocab_size as u128;
        if n > MAX_SEQUENCES as u128 {
            return Err(Error::EnumerationGuard {
                sequences: n,
                max: MAX_SEQUENCES,
            });
        }
    }
    Ok(n as usize)
}

/// Base-`V` encoding of a token sequence, first token most significant.
pub fn sequence_index(tokens: &[usize], vocab_size: usize) -> usize {
    let mut idx = 0;
    for &t in tokens {
        debug_assert!(t < vocab_size);
        idx = idx * vocab_size + t;
    }
    idx
}

/// Inverse of [`sequence_index`] for sequences of length `length`.
pub fn decode_sequence(mut index: usize, vocab_size: usize, length: usize) -> Vec<usize> {
    let mut tokens = vec![0; length];
    for slot in tokens.iter_mut().rev() {
        *slot = index % vocab_size;
        index /= vocab_size;
    }
    tokens
}

/// An autoregressive model over `V^N` given by explicit conditional tables.
///
/// `tables[i]` holds one next-token distribution for each of the `V^i`
/// prefixes of length `i`, indexed by the prefix's base-`V` encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyAutoregressiveModel {
    vocab_size: usize,
    length: usize,
    tables: Vec<Vec<CategoricalDistribution>>,
}

impl ToyAutoregressiveModel {
    pub fn new(
        vocab_size: usize,
        length: usize,
        tables: Vec<Vec<CategoricalDistribution>>,
    ) -> Result<Self> {
        num_sequences(vocab_size, length)?;
        if length == 0 {
            return Err(Error::InvalidParameter {
                what: "model length must be at least 1".to_string(),
            });
        }
        if tables.len() != length {
            return Err(Error::DimensionMismatch {
                left: tables.len(),
                right: length,
            });
        }
        let mut expected = 1usize;
        for (level, level_tables) in tables.iter().enumerate() {
            if level_tables.len() != expected {
                return Err(Error::DimensionMismatch {
                    left: level_tables.len(),
                    right: expected,
                });
            }
            for cond in level_tables {
                if cond.dim() != vocab_size {
                    return Err(Error::DimensionMismatch {
                        left: cond.dim(),
                        right: vocab_size,
                    });
                }
            }
            let _ = level;
            expected *= vocab_size;
        }
        Ok(Self {
            vocab_size,
            length,
            tables,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn num_sequences(&self) -> usize {
        num_sequences(self.vocab_size, self.length).expect("validated at construction")
    }

    pub fn tables(&self) -> &[Vec<CategoricalDistribution>] {
        &self.tables
    }

    /// The stored next-token conditional for `prefix`.
    pub fn conditional_next(&self, prefix: &[usize]) -> Result<&CategoricalDistribution> {
        if prefix.len() >= self.length {
            return Err(Error::PrefixOutOfRange {
                len: prefix.len(),
                max: self.length,
            });
        }
        for &t in prefix {
            if t >= self.vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab: self.vocab_size,
                });
            }
        }
        Ok(&self.tables[prefix.len()][sequence_index(prefix, self.vocab_size)])
    }

    /// Conditional looked up by prefix level and encoded prefix index.
    pub(crate) fn conditional_at(&self, level: usize, prefix_index: usize) -> &CategoricalDistribution {
        &self.tables[level][prefix_index]
    }

    /// The exact sequence distribution `probs[z] = Πᵢ m(zᵢ | z_{<i})`.
    pub fn enumerate_distribution(&self) -> SequenceDistribution {
        let mut level_probs = vec![1.0f64];
        for level in 0..self.length {
            let mut next = vec![0.0f64; level_probs.len() * self.vocab_size];
            for (prefix_idx, &prefix_prob) in level_probs.iter().enumerate() {
                let cond = self.conditional_at(level, prefix_idx);
                for (token, &p) in cond.probs().iter().enumerate() {
                    next[prefix_idx * self.vocab_size + token] = prefix_prob * p;
                }
            }
            level_probs = next;
        }
        SequenceDistribution::new(self.vocab_size, self.length, level_probs)
            .expect("chain-rule product of valid conditionals")
    }

    /// Draw one sequence from the counter stream keyed by `key`.
    fn sample_one(&self, key: u64) -> Vec<usize> {
        let mut tokens = Vec::with_capacity(self.length);
        for position in 0..self.length {
            let cond = self.conditional_at(position, sequence_index(&tokens, self.vocab_size));
            let u = rng::unit_f64(rng::stream(key, position as u64));
            tokens.push(sample_categorical(cond, u));
        }
        tokens
    }

    /// Draw `count` sequences. Each draw's randomness is keyed by
    /// `(seed, draw_index)`, so results do not depend on evaluation order.
    pub fn sample_sequences(&self, count: usize, seed: u64) -> Vec<Vec<usize>> {
        (0..count)
            .map(|draw| self.sample_one(rng::derive_key(seed, &[draw as u64])))
            .collect()
    }
}

/// Rebuild explicit conditional tables from a sequence distribution:
/// `q(t | prefix) = mass(prefix·t) / mass(prefix)` over subtree sums.
/// Prefixes with zero mass get uniform conditionals (they are never
/// reached). Enumerating the result reproduces the input distribution.
pub fn autoregressive_factorization(d: &SequenceDistribution) -> Result<ToyAutoregressiveModel> {
    let vocab = d.vocab_size();
    let length = d.length();
    let mut level_mass: Vec<Vec<f64>> = vec![d.probs().to_vec()];
    while level_mass.last().expect("nonempty").len() > 1 {
        let children = level_mass.last().expect("nonempty");
        let parents: Vec<f64> = (0..children.len() / vocab)
            .map(|i| children[i * vocab..(i + 1) * vocab].iter().sum())
            .collect();
        level_mass.push(parents);
    }
    level_mass.reverse(); // level_mass[i] now holds prefixes of length i
    let mut tables = Vec::with_capacity(length);
    for level in 0..length {
        let parents = &level_mass[level];
        let children = &level_mass[level + 1];
        let mut level_tables = Vec::with_capacity(parents.len());
        for (prefix_idx, &mass) in parents.iter().enumerate() {
            let cond = if mass > 0.0 {
                CategoricalDistribution::normalized(
                    children[prefix_idx * vocab..(prefix_idx + 1) * vocab].to_vec(),
                )?
            } else {
                CategoricalDistribution::uniform(vocab)?
            };
            level_tables.push(cond);
        }
        tables.push(level_tables);
    }
    ToyAutoregressiveModel::new(vocab, length, tables)
}

/// CDF walk; `u` in [0, 1).
fn sample_categorical(dist: &CategoricalDistribution, u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in dist.probs().iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.dim() - 1
}

/// A dense distribution over all `|V|^N` sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDistribution {
    vocab_size: usize,
    length: usize,
    probs: Vec<f64>,
}

impl SequenceDistribution {
    pub fn new(vocab_size: usize, length: usize, probs: Vec<f64>) -> Result<Self> {
        let n = num_sequences(vocab_size, length)?;
        if probs.len() != n {
            return Err(Error::DimensionMismatch {
                left: probs.len(),
                right: n,
            });
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    what: "sequence probability",
                });
            }
            if p < 0.0 {
                return Err(Error::NegativeProbability { index: i, value: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SEQ_SUM_TOL {
            return Err(Error::NotNormalized {
                sum,
                tol: SEQ_SUM_TOL,
            });
        }
        Ok(Self {
            vocab_size,
            length,
            probs,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn num_sequences(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn prob_of(&self, tokens: &[usize]) -> f64 {
        self.probs[sequence_index(tokens, self.vocab_size)]
    }

    /// Total variation distance `½ Σ |p − q|`.
    pub fn total_variation(&self, other: &SequenceDistribution) -> Result<f64> {
        if self.probs.len() != other.probs.len() {
            return Err(Error::DimensionMismatch {
                left: self.probs.len(),
                right: other.probs.len(),
            });
        }
        Ok(self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(&p, &q)| (p - q).abs())
            .sum::<f64>()
            / 2.0)
    }
}

/// One question of a [`ToyInstance`].
#[derive(Debug, Clone)]
pub struct Question {
    pub id: String,
    pub weight: f64,
    pub model: ToyAutoregressiveModel,
    pub truth: SequenceDistribution,
    pub collapse: CollapsingFunction,
}

/// A finite question distribution with per-question model, ground truth,
/// and collapsing function, all over a shared `(V, N)`.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    vocab_size: usize,
    length: usize,
    questions: Vec<Question>,
}

impl ToyInstance {
    pub fn new(questions: Vec<Question>) -> Result<Self> {
        let first = questions.first().ok_or(Error::EmptyInput {
            what: "instance questions",
        })?;
        let vocab_size = first.model.vocab_size();
        let length = first.model.length();
        let n = num_sequences(vocab_size, length)?;
        let mut weight_sum = 0.0;
        for (i, q) in questions.iter().enumerate() {
            if q.model.vocab_size() != vocab_size || q.model.length() != length {
                return Err(Error::Data(format!(
                    "question {} does not share the instance vocabulary/length",
                    q.id
                )));
            }
            if q.truth.vocab_size() != vocab_size || q.truth.length() != length {
                return Err(Error::Data(format!(
                    "question {} truth distribution has mismatched shape",
                    q.id
                )));
            }
            if q.collapse.num_sequences() != n {
                return Err(Error::Data(format!(
                    "question {} collapse does not cover all {n} sequences",
                    q.id
                )));
            }
            if !q.weight.is_finite() || q.weight < 0.0 {
                return Err(Error::NegativeProbability {
                    index: i,
                    value: q.weight,
                });
            }
            weight_sum += q.weight;
        }
        if (weight_sum - 1.0).abs() > crate::prob::SIMPLEX_TOL {
            return Err(Error::NotNormalized {
                sum: weight_sum,
                tol: crate::prob::SIMPLEX_TOL,
            });
        }
        Ok(Self {
            vocab_size,
            length,
            questions,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn num_sequences(&self) -> usize {
        num_sequences(self.vocab_size, self.length).expect("validated at construction")
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    /// Serialize to pretty JSON. Floats are written in shortest
    /// round-trip form, so `from_json(to_json(x))` is exact.
    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            vocab_size: self.vocab_size,
            length: self.length,
            questions: self
                .questions
                .iter()
                .map(|q| QuestionFile {
                    id: q.id.clone(),
                    weight: q.weight,
                    tables: q
                        .model
                        .tables()
                        .iter()
                        .map(|level| level.iter().map(|c| c.probs().to_vec()).collect())
                        .collect(),
                    truth: q.truth.probs().to_vec(),
                    num_classes: q.collapse.num_classes(),
                    class_map: q.collapse.assignment().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("instance serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("instance file: {e}")))?;
        let questions = file
            .questions
            .into_iter()
            .map(|q| {
                let tables = q
                    .tables
                    .into_iter()
                    .map(|level| {
                        level
                            .into_iter()
                            .map(CategoricalDistribution::new)
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let model = ToyAutoregressiveModel::new(file.vocab_size, file.length, tables)?;
                let truth = SequenceDistribution::new(file.vocab_size, file.length, q.truth)?;
                let collapse = CollapsingFunction::new(q.num_classes, q.class_map)?;
                Ok(Question {
                    id: q.id,
                    weight: q.weight,
                    model,
                    truth,
                    collapse,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(questions)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    vocab_size: usize,
    length: usize,
    questions: Vec<QuestionFile>,
}

#[derive(Serialize, Deserialize)]
struct QuestionFile {
    id: String,
    weight: f64,
    tables: Vec<Vec<Vec<f64>>>,
    truth: Vec<f64>,
    num_classes: usize,
    class_map: Vec<usize>,
}

/// Size parameters for the fixture builders.
#[derive(Debug, Clone, Copy)]
pub struct InstanceSpec {
    pub vocab_size: usize,
    pub length: usize,
    pub num_classes: usize,
    pub num_questions: usize,
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        let n = num_sequences(self.vocab_size, self.length)?;
        if self.num_classes == 0 || self.num_classes > n {
            return Err(Error::InvalidParameter {
                what: format!(
                    "num_classes {} must be in 1..={} for {} sequences",
                    self.num_classes, n, n
                ),
            });
        }
        if self.num_questions == 0 {
            return Err(Error::InvalidParameter {
                what: "num_questions must be at least 1".to_string(),
            });
        }
        Ok(())
    }
}

/// Random conditionals: per prefix, `V` independent uniform draws in (0, 1),
/// exponentiated and normalized. Strictly positive everywhere.
pub fn random_model(vocab_size: usize, length: usize, key: u64) -> Result<ToyAutoregressiveModel> {
    random_model_with_gain(vocab_size, length, key, 1.0)
}

/// [`random_model`] with the uniform draws scaled by `gain` before
/// exponentiation. Gain 1 is the flat default; larger gains sharpen the
/// conditionals (ratios up to `e^gain`) while staying strictly positive.
pub fn random_model_with_gain(
    vocab_size: usize,
    length: usize,
    key: u64,
    gain: f64,
) -> Result<ToyAutoregressiveModel> {
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::InvalidParameter {
            what: format!("model gain {gain} must be positive"),
        });
    }
    num_sequences(vocab_size, length)?;
    let mut tables = Vec::with_capacity(length);
    let mut level_size = 1usize;
    for level in 0..length {
        let mut level_tables = Vec::with_capacity(level_size);
        for prefix_idx in 0..level_size {
            let mut rng = CounterRng::from_parts(key, &[level as u64, prefix_idx as u64]);
            let weights: Vec<f64> = (0..vocab_size)
                .map(|_| (gain * rng.next_open_f64()).exp())
                .collect();
            level_tables.push(CategoricalDistribution::normalized(weights)?);
        }
        tables.push(level_tables);
        level_size *= vocab_size;
    }
    ToyAutoregressiveModel::new(vocab_size, length, tables)
}

/// Random total class map; every class in `[K]` is hit at least once.
pub fn random_collapse(num_sequences: usize, num_classes: usize, key: u64) -> Result<CollapsingFunction> {
    if num_classes == 0 || num_classes > num_sequences {
        return Err(Error::InvalidParameter {
            what: format!("num_classes {num_classes} out of range for {num_sequences} sequences"),
        });
    }
    let mut rng = CounterRng::from_parts(key, &[0x636c6173]);
    let assignment: Vec<usize> = (0..num_sequences)
        .map(|z| if z < num_classes { z } else { rng.next_below(num_classes) })
        .collect();
    CollapsingFunction::new(num_classes, assignment)
}

fn random_question_weights(count: usize, key: u64) -> Vec<f64> {
    let mut rng = CounterRng::from_parts(key, &[0x77656967]);
    let weights: Vec<f64> = (0..count).map(|_| rng.next_open_f64().exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Truth with a random distribution inside each class, but class masses
/// equal to the model pushforward. The question is then exactly calibrated
/// at both the full and the confidence level.
pub fn calibrated_truth(
    model: &ToyAutoregressiveModel,
    collapse: &CollapsingFunction,
    key: u64,
) -> SequenceDistribution {
    let model_dist = model.enumerate_distribution();
    let class_mass = crate::collapse::pushforward(&model_dist, collapse)
        .expect("builder shapes agree");
    let n = model_dist.num_sequences();
    let mut rng = CounterRng::from_parts(key, &[0x74727574]);
    let raw: Vec<f64> = (0..n).map(|_| rng.next_open_f64().exp()).collect();
    let mut class_totals = vec![0.0f64; collapse.num_classes()];
    for (z, &w) in raw.iter().enumerate() {
        class_totals[collapse.class_of(z)] += w;
    }
    let probs: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(z, &w)| {
            let k = collapse.class_of(z);
            class_mass.prob(k) * (w / class_totals[k])
        })
        .collect();
    SequenceDistribution::new(model.vocab_size(), model.length(), probs)
        .expect("class-mass rescaling preserves normalization")
}

/// Build an instance that is exactly calibrated by construction: per
/// question, the truth pushforward over classes equals the model
/// pushforward.
pub fn make_calibrated_instance(spec: &InstanceSpec, seed: u64) -> Result<ToyInstance> {
    make_calibrated_instance_with_gain(spec, (1.0, 1.0), seed)
}

/// [`make_calibrated_instance`] with a per-question model gain drawn
/// uniformly from `gain_range`, spreading the attained confidences over a
/// wide band instead of clustering near uniform. Calibration stays exact.
pub fn make_calibrated_instance_with_gain(
    spec: &InstanceSpec,
    gain_range: (f64, f64),
    seed: u64,
) -> Result<ToyInstance> {
    spec.validate()?;
    let (lo, hi) = gain_range;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidParameter {
            what: format!("gain range ({lo}, {hi}) must be positive and ordered"),
        });
    }
    let n = num_sequences(spec.vocab_size, spec.length)?;
    let weights = random_question_weights(spec.num_questions, seed);
    let questions = (0..spec.num_questions)
        .map(|qi| {
            let qkey = rng::derive_key(seed, &[qi as u64]);
            let gain = lo + (hi - lo) * CounterRng::from_parts(qkey, &[0x6761]).next_f64();
            let model = random_model_with_gain(spec.vocab_size, spec.length, qkey, gain)?;
            let collapse = random_collapse(n, spec.num_classes, qkey)?;
            let truth = calibrated_truth(&model, &collapse, qkey);
            Ok(Question {
                id: format!("q{qi:05}"),
                weight: weights[qi],
                model,
                truth,
                collapse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ToyInstance::new(questions)
}

/// Like [`make_calibrated_instance`], then shift the truth mass on each
/// question's top class by `bias` and renormalize the rest.
pub fn make_miscalibrated_instance(spec: &InstanceSpec, bias: f64, seed: u64) -> Result<ToyInstance> {
    make_miscalibrated_instance_with_gain(spec, (1.0, 1.0), bias, seed)
}

/// Biased variant of [`make_calibrated_instance_with_gain`].
pub fn make_miscalibrated_instance_with_gain(
    spec: &InstanceSpec,
    gain_range: (f64, f64),
    bias: f64,
    seed: u64,
) -> Result<ToyInstance> {
    if !bias.is_finite() || bias.abs() > 0.5 {
        return Err(Error::InvalidParameter {
            what: format!("bias {bias} outside [-0.5, 0.5]"),
        });
    }
    let calibrated = make_calibrated_instance_with_gain(spec, gain_range, seed)?;
    let questions = calibrated
        .questions
        .iter()
        .map(|q| {
            let truth = bias_truth_top_class(q, bias)?;
            Ok(Question {
                id: q.id.clone(),
                weight: q.weight,
                model: q.model.clone(),
                truth,
                collapse: q.collapse.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ToyInstance::new(questions)
}

fn bias_truth_top_class(q: &Question, bias: f64) -> Result<SequenceDistribution> {
    let model_dist = q.model.enumerate_distribution();
    let prediction = crate::collapse::semantic_prediction(&model_dist, &q.collapse)?;
    let top = prediction.top_class;
    let top_mass = prediction.confidence;
    let target = top_mass + bias;
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidParameter {
            what: format!("bias {bias} drives top-class truth mass to {target}"),
        });
    }
    let rest = 1.0 - top_mass;
    if rest <= 0.0 && bias != 0.0 {
        return Err(Error::InvalidParameter {
            what: "cannot bias a question whose top class carries all mass".to_string(),
        });
    }
    let top_scale = if top_mass > 0.0 { target / top_mass } else { 1.0 };
    let rest_scale = if rest > 0.0 { (1.0 - target) / rest } else { 1.0 };
    let probs: Vec<f64> = q
        .truth
        .probs()
        .iter()
        .enumerate()
        .map(|(z, &p)| {
            if q.collapse.class_of(z) == top {
                p * top_scale
            } else {
                p * rest_scale
            }
        })
        .collect();
    SequenceDistribution::new(q.truth.vocab_size(), q.truth.length(), probs)
}
