//! Verification fixture suites: every theorem-level claim the library makes,
//! run against randomized fixtures with pinned tolerances.
//!
//! Each check reports the worst observed value against its bound; a seed
//! change redraws the fixtures but must not flip any outcome (tolerances
//! absorb the randomness).

use rayon::prelude::*;
use serde::Serialize;

use semcal_core::calibmetrics::{
    exact_l1_ce, smooth_ece, smooth_ece_with_grid, PredictionOutcomePair,
    DEFAULT_SIGMA, SMECE_GRID,
};
use semcal_core::collapse::CollapsingFunction;
use semcal_core::conformal::coverage;
use semcal_core::lossopt::{
    confidence_gap, full_gap, kl_gap_to_optimality, probe_class_nll, semantic_entropy,
    verify_quantitative_bounds, LogLoss, ProperLoss,
};
use semcal_core::perturb::{
    factorized_confidence_perturbation, factorized_full_perturbation,
    max_lookahead_identity_error, realize_confidence_perturbation, realize_full_perturbation,
    tilt, ConfidencePerturbation, FullPerturbation, Perturbation,
};
use semcal_core::prob::{CategoricalDistribution, OneHot};
use semcal_core::rng::{derive_key, CounterRng};
use semcal_core::seqmodel::{
    make_calibrated_instance, num_sequences, random_collapse, random_model, InstanceSpec,
    Question, SequenceDistribution, ToyAutoregressiveModel, ToyInstance,
};

/// How a check's observed value relates to its bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub observed: f64,
    pub bound: f64,
    pub direction: Direction,
    pub passed: bool,
}

impl CheckResult {
    fn at_most(name: &str, observed: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            observed,
            bound,
            direction: Direction::AtMost,
            passed: observed <= bound,
        }
    }

    fn at_least(name: &str, observed: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            observed,
            bound,
            direction: Direction::AtLeast,
            passed: observed >= bound,
        }
    }
}

/// Size caps for the randomized fixture sweeps.
#[derive(Debug, Clone, Copy)]
pub struct FixtureCaps {
    pub max_vocab: usize,
    pub max_length: usize,
    pub count: usize,
}

impl Default for FixtureCaps {
    fn default() -> Self {
        Self {
            max_vocab: crate::config::DEFAULT_FIXTURE_VOCAB,
            max_length: crate::config::DEFAULT_FIXTURE_LENGTH,
            count: crate::config::DEFAULT_FIXTURES,
        }
    }
}

/// One random (model, collapse) pair within the caps.
fn circuit_fixture(seed: u64, index: u64, caps: FixtureCaps) -> (ToyAutoregressiveModel, CollapsingFunction) {
    let key = derive_key(seed, &[0xC1, index]);
    let mut rng = CounterRng::new(key);
    let vocab = 2 + rng.next_below(caps.max_vocab - 1);
    let length = 1 + rng.next_below(caps.max_length);
    let n = num_sequences(vocab, length).expect("caps validated");
    let classes = 1 + rng.next_below(4.min(n));
    let model = random_model(vocab, length, derive_key(key, &[1])).expect("caps validated");
    let collapse = random_collapse(n, classes, derive_key(key, &[2])).expect("classes within range");
    (model, collapse)
}

/// Worst total variation between the token-factorized circuit and the
/// sequence-level tilt, over `caps.count` instances × 20 random tau each,
/// for the scalar and the vector circuit.
pub fn circuit_equivalence(seed: u64, caps: FixtureCaps) -> (CheckResult, CheckResult) {
    let worst: Vec<(f64, f64)> = (0..caps.count as u64)
        .into_par_iter()
        .map(|i| {
            let (model, collapse) = circuit_fixture(seed, i, caps);
            let base = model.enumerate_distribution();
            let mut worst_scalar = 0.0f64;
            let mut worst_vector = 0.0f64;
            for trial in 0..20u64 {
                let tau_key = derive_key(seed, &[0x7A, i, trial]);
                let conf = ConfidencePerturbation::random(tau_key);
                let direct = tilt(
                    &base,
                    &realize_confidence_perturbation(&conf, &base, &collapse).unwrap(),
                )
                .unwrap();
                let factorized =
                    factorized_confidence_perturbation(&model, &collapse, &conf).unwrap();
                worst_scalar = worst_scalar.max(direct.total_variation(&factorized).unwrap());

                let full = FullPerturbation::random(collapse.num_classes(), tau_key ^ 0xF);
                let direct = tilt(
                    &base,
                    &realize_full_perturbation(&full, &base, &collapse).unwrap(),
                )
                .unwrap();
                let factorized = factorized_full_perturbation(&model, &collapse, &full).unwrap();
                worst_vector = worst_vector.max(direct.total_variation(&factorized).unwrap());
            }
            (worst_scalar, worst_vector)
        })
        .collect();
    let scalar = worst.iter().map(|w| w.0).fold(0.0, f64::max);
    let vector = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    (
        CheckResult::at_most("circuit-equivalence-scalar", scalar, 1e-9),
        CheckResult::at_most("circuit-equivalence-vector", vector, 1e-9),
    )
}

/// Worst per-prefix lookahead identity error over the same fixture sweep.
pub fn lookahead_identity(seed: u64, caps: FixtureCaps) -> CheckResult {
    let worst = (0..caps.count as u64)
        .into_par_iter()
        .map(|i| {
            let (model, collapse) = circuit_fixture(seed, i, caps);
            let mut worst = 0.0f64;
            for trial in 0..20u64 {
                let tau_key = derive_key(seed, &[0x7A, i, trial]);
                let conf = Perturbation::Confidence(ConfidencePerturbation::random(tau_key));
                worst = worst.max(max_lookahead_identity_error(&model, &collapse, &conf).unwrap());
                let full = Perturbation::Full(FullPerturbation::random(
                    collapse.num_classes(),
                    tau_key ^ 0xF,
                ));
                worst = worst.max(max_lookahead_identity_error(&model, &collapse, &full).unwrap());
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    CheckResult::at_most("lookahead-identity", worst, 1e-10)
}

fn calibrated_fixture(seed: u64, index: u64) -> ToyInstance {
    let key = derive_key(seed, &[0xCA, index]);
    let mut rng = CounterRng::new(key);
    let vocab = 2 + rng.next_below(3);
    let length = 1 + rng.next_below(3);
    let n = num_sequences(vocab, length).expect("small sizes");
    let spec = InstanceSpec {
        vocab_size: vocab,
        length,
        num_classes: (2 + rng.next_below(3)).min(n),
        num_questions: 2 + rng.next_below(5),
    };
    make_calibrated_instance(&spec, derive_key(key, &[3])).expect("valid spec")
}

/// Calibration ⇒ local loss optimality: exact residuals and the confidence
/// gap both vanish on calibrated builders.
pub fn equivalence_forward(seed: u64) -> (CheckResult, CheckResult) {
    let results: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let inst = calibrated_fixture(seed, i);
            (
                exact_l1_ce(&inst).unwrap(),
                confidence_gap(&inst).unwrap().gap,
            )
        })
        .collect();
    let worst_l1 = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_gap = results.iter().map(|r| r.1).fold(0.0, f64::max);
    (
        CheckResult::at_most("equivalence-forward-l1-ce", worst_l1, 1e-10),
        CheckResult::at_most("equivalence-forward-gap", worst_gap, 1e-9),
    )
}

/// A categorical dataset with confidence calibration error exactly `ce`.
pub fn miscalibrated_dataset(
    seed: u64,
    index: u64,
    ce: f64,
) -> Vec<(CategoricalDistribution, OneHot, f64)> {
    let mut rng = CounterRng::new(derive_key(seed, &[0xD5, index]));
    let levels = 1 + rng.next_below(3);
    let mass = 1.0 / levels as f64;
    let mut atoms = Vec::new();
    for _ in 0..levels {
        let k = 2 + rng.next_below(3);
        let top = rng.next_below(k);
        // Strict argmax: top value above 1/2, rest split evenly.
        let v = 0.52 + 0.16 * rng.next_f64();
        let rest = (1.0 - v) / (k - 1) as f64;
        let probs: Vec<f64> = (0..k).map(|j| if j == top { v } else { rest }).collect();
        let f = CategoricalDistribution::new(probs).unwrap();
        let sign = if rng.next_f64() < 0.5 { 1.0 } else { -1.0 };
        let accuracy = v + sign * ce;
        let other = (top + 1) % k;
        atoms.push((f.clone(), OneHot::new(top, k).unwrap(), mass * accuracy));
        atoms.push((f, OneHot::new(other, k).unwrap(), mass * (1.0 - accuracy)));
    }
    atoms
}

/// The two-sided smoothness bound on 20 miscalibrated categorical fixtures
/// with CE spread over [0.05, 0.3].
pub fn quantitative_bounds(seed: u64) -> (CheckResult, CheckResult) {
    let margins: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let ce = 0.05 + 0.25 * i as f64 / 19.0;
            let dataset = miscalibrated_dataset(seed, i, ce);
            let report = verify_quantitative_bounds(&dataset, &LogLoss).unwrap();
            assert!(
                (report.ce - ce).abs() < 1e-12,
                "fixture {i}: CE {} != {ce}",
                report.ce
            );
            (
                report.lambda_gap - report.lower_bound,
                report.upper_bound - report.lambda_gap,
            )
        })
        .collect();
    let worst_lower = margins.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
    let worst_upper = margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    (
        CheckResult::at_least("quantitative-bound-lower", worst_lower, -1e-6),
        CheckResult::at_least("quantitative-bound-upper", worst_upper, -1e-6),
    )
}

/// Exactly calibrated weighted pair set: hit/miss pairs at each decile.
pub fn calibrated_pair_set() -> Vec<PredictionOutcomePair> {
    let levels = 9;
    let mut pairs = Vec::new();
    for i in 1..=levels {
        let v = i as f64 / 10.0;
        pairs.push(PredictionOutcomePair::new(v, true, v / levels as f64).unwrap());
        pairs.push(PredictionOutcomePair::new(v, false, (1.0 - v) / levels as f64).unwrap());
    }
    pairs
}

/// SmoothECE: vanishes on calibrated pairs, agrees with the 10×-resolution
/// quadrature oracle, and runs at the pinned default bandwidth.
pub fn smooth_ece_checks() -> Vec<CheckResult> {
    let calibrated = smooth_ece(&calibrated_pair_set(), DEFAULT_SIGMA).unwrap();
    let constant = vec![
        PredictionOutcomePair::new(0.8, true, 0.5).unwrap(),
        PredictionOutcomePair::new(0.8, false, 0.5).unwrap(),
    ];
    let standard = smooth_ece(&constant, DEFAULT_SIGMA).unwrap();
    let oracle = smooth_ece_with_grid(&constant, DEFAULT_SIGMA, 10 * SMECE_GRID).unwrap();
    vec![
        CheckResult::at_most("smece-calibrated", calibrated, 1e-10),
        CheckResult::at_most("smece-oracle-agreement", (standard - oracle).abs(), 1e-3),
        CheckResult::at_most("smece-default-sigma", (DEFAULT_SIGMA - 0.05).abs(), 0.0),
    ]
}

/// Conformal coverage on calibrated fixtures at the pinned alpha grid:
/// worst slack of `coverage − (1 − alpha)`.
pub fn conformal_coverage(seed: u64) -> CheckResult {
    let alphas = [0.05, 0.1, 0.2, 0.3, 0.5];
    let worst = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let inst = calibrated_fixture(seed, 1000 + i);
            alphas
                .iter()
                .map(|&alpha| coverage(&inst, alpha).unwrap() - (1.0 - alpha))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    CheckResult::at_least("conformal-coverage-slack", worst, -1e-12)
}

/// KL-gap identity on 100 random (instance, probe) pairs:
/// `KL = NLL − semantic entropy` with both sides enumerated independently.
pub fn kl_gap_identity(seed: u64) -> CheckResult {
    let worst = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let key = derive_key(seed, &[0x6B, i]);
            let mut rng = CounterRng::new(key);
            let vocab = 2 + rng.next_below(3);
            let length = 1 + rng.next_below(3);
            let n = num_sequences(vocab, length).unwrap();
            let classes = (2 + rng.next_below(3)).min(n);
            let spec = InstanceSpec {
                vocab_size: vocab,
                length,
                num_classes: classes,
                num_questions: 1 + rng.next_below(3),
            };
            let inst = make_calibrated_instance(&spec, derive_key(key, &[4])).unwrap();
            let probe: Vec<CategoricalDistribution> = (0..inst.questions().len())
                .map(|_| {
                    CategoricalDistribution::normalized(
                        (0..classes).map(|_| rng.next_open_f64().exp()).collect(),
                    )
                    .unwrap()
                })
                .collect();
            let kl = kl_gap_to_optimality(&inst, &probe).unwrap();
            let nll = probe_class_nll(&inst, &probe).unwrap();
            let entropy = semantic_entropy(&inst).unwrap();
            (kl - (nll - entropy)).abs()
        })
        .reduce(|| 0.0, f64::max);
    CheckResult::at_most("kl-gap-identity", worst, 1e-12)
}

/// Duality identities of the log-loss at 10⁴ random simplex points, plus
/// the finite-difference gradient check at 100 random logit points.
pub fn duality_checks(seed: u64) -> Vec<CheckResult> {
    let loss = LogLoss;
    let mut rng = CounterRng::new(derive_key(seed, &[0xD0]));
    let mut worst_loss_agreement = 0.0f64;
    let mut worst_inverse = 0.0f64;
    for trial in 0..10_000usize {
        let dim = 2 + trial % 4;
        let v = CategoricalDistribution::normalized(
            (0..dim).map(|_| rng.next_open_f64().exp()).collect(),
        )
        .unwrap();
        let y = OneHot::new(trial % dim, dim).unwrap();
        let dual = loss.dual_map(&v).unwrap();
        worst_loss_agreement = worst_loss_agreement
            .max((loss.primal_loss(y, &v).unwrap() - loss.dual_loss(y, &dual)).abs());
        let recovered = loss.conjugate_gradient(&dual);
        for (a, b) in recovered.iter().zip(v.probs()) {
            worst_inverse = worst_inverse.max((a - b).abs());
        }
    }
    let mut worst_gradient = 0.0f64;
    let eps = 1e-6;
    for trial in 0..100usize {
        let dim = 2 + trial % 3;
        let z: Vec<f64> = (0..dim).map(|_| 6.0 * rng.next_f64() - 3.0).collect();
        let grad = loss.conjugate_gradient(&z);
        for k in 0..dim {
            let mut up = z.clone();
            let mut down = z.clone();
            up[k] += eps;
            down[k] -= eps;
            let fd = (loss.conjugate(&up) - loss.conjugate(&down)) / (2.0 * eps);
            worst_gradient = worst_gradient.max((fd - grad[k]).abs());
        }
    }
    vec![
        CheckResult::at_most("duality-loss-agreement", worst_loss_agreement, 1e-9),
        CheckResult::at_most("duality-inverse-map", worst_inverse, 1e-9),
        CheckResult::at_most("conjugate-gradient-fd", worst_gradient, 1e-6),
    ]
}

/// The explicit 3-class fixture with correct top mass but permuted non-top
/// masses: confidence-calibrated, not fully calibrated.
pub fn separation_fixture() -> ToyInstance {
    let tables = vec![vec![
        CategoricalDistribution::new(vec![0.5, 0.3, 0.2]).unwrap(),
    ]];
    let model = ToyAutoregressiveModel::new(3, 1, tables).unwrap();
    let collapse = CollapsingFunction::new(3, vec![0, 1, 2]).unwrap();
    let truth = SequenceDistribution::new(3, 1, vec![0.5, 0.2, 0.3]).unwrap();
    ToyInstance::new(vec![Question {
        id: "separation".to_string(),
        weight: 1.0,
        model,
        truth,
        collapse,
    }])
    .expect("hand-built fixture is valid")
}

pub fn separation_checks() -> (CheckResult, CheckResult) {
    let inst = separation_fixture();
    let conf = confidence_gap(&inst).unwrap().gap;
    let full = full_gap(&inst).unwrap().gap;
    (
        CheckResult::at_most("separation-confidence-gap", conf, 1e-9),
        CheckResult::at_least("separation-full-gap", full, 1e-3),
    )
}

/// Run every suite.
pub fn run_all(seed: u64, caps: FixtureCaps) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let (scalar, vector) = circuit_equivalence(seed, caps);
    results.push(scalar);
    results.push(vector);
    results.push(lookahead_identity(seed, caps));
    let (l1, gap) = equivalence_forward(seed);
    results.push(l1);
    results.push(gap);
    let (lower, upper) = quantitative_bounds(seed);
    results.push(lower);
    results.push(upper);
    results.extend(smooth_ece_checks());
    results.push(conformal_coverage(seed));
    results.push(kl_gap_identity(seed));
    results.extend(duality_checks(seed));
    let (sep_conf, sep_full) = separation_checks();
    results.push(sep_conf);
    results.push(sep_full);
    results
}
