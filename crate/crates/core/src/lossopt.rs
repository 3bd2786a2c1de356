//! Proper losses, dual representations, and local loss-optimality gaps.
//!
//! The negative log-loss is carried in both its primal form (on class
//! probabilities) and its dual form (on logits, via the log-sum-exp
//! conjugate). Tilting a distribution is an additive shift of its logits, so
//! the best achievable loss improvement over a perturbation family — the
//! gap — is computable exactly: each attained confidence level (or attained
//! prediction vector) decouples into an independent low-dimensional concave
//! maximization, solved by a dense grid plus golden-section refinement.
//!
//! A model is perfectly confidence-calibrated iff [`confidence_gap`] is
//! zero, and fully calibrated iff [`full_gap`] is zero;
//! [`verify_quantitative_bounds`] checks the quantitative two-sided bound
//! `½·CE² ≤ λ·Gap ≤ CE` relating the calibration error to the gap of the
//! dual-perturbed family.

use serde::Serialize;

use crate::calibmetrics::question_calibrations;
use crate::perturb::{tilt, Perturbation};
use crate::prob::entropy as class_entropy;
use crate::prob::{
    kl_divergence, log_sum_exp, softmax, CategoricalDistribution, LogitVector, OneHot,
};
use crate::seqmodel::ToyInstance;
use crate::{Error, Result};

/// A proper loss given by its Savage representation: a convex potential on
/// the simplex, its conjugate, the dual (logit) map, and both loss forms.
pub trait ProperLoss {
    /// Convex potential `φ(v)`.
    fn potential(&self, v: &CategoricalDistribution) -> f64;
    /// Convex conjugate `ψ(z) = φ*(z)`.
    fn conjugate(&self, z: &[f64]) -> f64;
    /// `∇ψ(z)`, mapping logits back to the simplex.
    fn conjugate_gradient(&self, z: &[f64]) -> Vec<f64>;
    /// Dual variable of a prediction; requires full support.
    fn dual_map(&self, v: &CategoricalDistribution) -> Result<Vec<f64>>;
    /// Primal loss `ℓ(y, v)`.
    fn primal_loss(&self, y: OneHot, v: &CategoricalDistribution) -> Result<f64>;
    /// Dual loss `ℓ*(y, z) = ψ(z) − z_y`.
    fn dual_loss(&self, y: OneHot, z: &[f64]) -> f64;
    /// Smoothness constant of `ψ`.
    fn smoothness(&self) -> f64;
}

/// Negative log-loss: potential = negative entropy, conjugate = log-sum-exp,
/// dual map = elementwise log, `∇ψ = softmax`. The conjugate is 1/4-smooth.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogLoss;

impl ProperLoss for LogLoss {
    fn potential(&self, v: &CategoricalDistribution) -> f64 {
        -class_entropy(v)
    }

    fn conjugate(&self, z: &[f64]) -> f64 {
        log_sum_exp(&LogitVector::new(z.to_vec()).expect("finite logits"))
    }

    fn conjugate_gradient(&self, z: &[f64]) -> Vec<f64> {
        softmax(&LogitVector::new(z.to_vec()).expect("finite logits"))
            .expect("softmax of finite logits")
            .probs()
            .to_vec()
    }

    fn dual_map(&self, v: &CategoricalDistribution) -> Result<Vec<f64>> {
        Ok(v.ln_vector()?.values().to_vec())
    }

    fn primal_loss(&self, y: OneHot, v: &CategoricalDistribution) -> Result<f64> {
        if y.dimension != v.dim() {
            return Err(Error::DimensionMismatch {
                left: y.dimension,
                right: v.dim(),
            });
        }
        let p = v.prob(y.index);
        if p <= 0.0 {
            return Err(Error::InfiniteLoss { index: y.index });
        }
        Ok(-p.ln())
    }

    fn dual_loss(&self, y: OneHot, z: &[f64]) -> f64 {
        self.conjugate(z) - z[y.index]
    }

    fn smoothness(&self) -> f64 {
        0.25
    }
}

/// Maximize a scalar function on `[lo, hi]`: 201-point grid, then
/// golden-section refinement of the best bracket down to width 1e-8.
/// Returns `(argmax, max)`.
pub(crate) fn maximize_scalar<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    const GRID: usize = 200;
    let mut best_x = lo;
    let mut best_v = f(lo);
    for i in 1..=GRID {
        let x = lo + (hi - lo) * i as f64 / GRID as f64;
        let v = f(x);
        if v > best_v {
            best_v = v;
            best_x = x;
        }
    }
    let step = (hi - lo) / GRID as f64;
    let mut a = (best_x - step).max(lo);
    let mut b = (best_x + step).min(hi);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > 1e-8 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let fm = f(mid);
    if fm > best_v {
        (mid, fm)
    } else {
        (best_x, best_v)
    }
}

/// The loss improvement of adding `t` to the top-class logit of every
/// question at one confidence level: `t·hit_mass − mass·ln(1 + (eᵗ − 1)·v)`.
fn level_improvement(t: f64, v: f64, mass: f64, hit_mass: f64) -> f64 {
    t * hit_mass - mass * (1.0 + (t.exp() - 1.0) * v).ln()
}

/// The chosen perturbation at one optimized level.
#[derive(Debug, Clone, Serialize)]
pub struct LevelOptimum {
    /// Rendering of the level key (a confidence value or a prediction
    /// vector).
    pub level: String,
    /// Optimal tau value(s) for the level.
    pub tau: Vec<f64>,
    pub mass: f64,
}

/// Outcome of a gap computation: `gap = base_loss − best_perturbed_loss ≥ 0`
/// up to optimizer tolerance, since the zero perturbation is in the family.
#[derive(Debug, Clone, Serialize)]
pub struct GapResult {
    pub base_loss: f64,
    pub best_perturbed_loss: f64,
    pub gap: f64,
    pub argmax: Vec<LevelOptimum>,
}

/// Exact expected sequence-level cross-entropy
/// `E_{(x,y)}[−log p̃_x(y)]`, optionally of the perturbed model.
pub fn sequence_cross_entropy(
    inst: &ToyInstance,
    perturbation: Option<&Perturbation>,
) -> Result<f64> {
    let mut total = 0.0;
    for q in inst.questions() {
        let p = q.model.enumerate_distribution();
        let effective = match perturbation {
            Some(w) => tilt(&p, &w.realize(&p, &q.collapse)?)?,
            None => p,
        };
        let mut question_loss = 0.0;
        for (z, &ty) in q.truth.probs().iter().enumerate() {
            if ty == 0.0 {
                continue;
            }
            let pz = effective.prob(z);
            if pz <= 0.0 {
                return Err(Error::InfiniteLoss { index: z });
            }
            question_loss -= ty * pz.ln();
        }
        total += q.weight * question_loss;
    }
    Ok(total)
}

/// Best loss improvement over the confidence family: one tau value in
/// [−1, 1] per attained confidence level, optimized independently (each
/// question's loss depends on tau only through its own level).
pub fn confidence_gap(inst: &ToyInstance) -> Result<GapResult> {
    let base_loss = sequence_cross_entropy(inst, None)?;
    let questions = question_calibrations(inst)?;
    // (confidence bits, v, mass, hit mass)
    let mut levels: Vec<(u64, f64, f64, f64)> = Vec::new();
    for q in &questions {
        let bits = q.confidence.to_bits();
        let hit = q.weight * q.truth_classes.prob(q.top_class);
        match levels.iter_mut().find(|(b, _, _, _)| *b == bits) {
            Some(level) => {
                level.2 += q.weight;
                level.3 += hit;
            }
            None => levels.push((bits, q.confidence, q.weight, hit)),
        }
    }
    levels.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut gap = 0.0;
    let mut argmax = Vec::with_capacity(levels.len());
    for &(_, v, mass, hit) in &levels {
        let objective = |t: f64| level_improvement(t, v, mass, hit);
        let (t_star, improvement) = maximize_scalar(&objective, -1.0, 1.0);
        gap += improvement;
        argmax.push(LevelOptimum {
            level: format!("{v}"),
            tau: vec![t_star],
            mass,
        });
    }
    Ok(GapResult {
        base_loss,
        best_perturbed_loss: base_loss - gap,
        gap,
        argmax,
    })
}

/// Best loss improvement over the full family: one tau vector in [−1, 1]^K
/// per attained prediction, optimized by coordinate ascent (the per-group
/// objective `⟨ā, τ⟩ − ln Σ_k π_k e^{τ_k}` is concave).
pub fn full_gap(inst: &ToyInstance) -> Result<GapResult> {
    let base_loss = sequence_cross_entropy(inst, None)?;
    let questions = question_calibrations(inst)?;
    struct Group {
        key: Vec<u64>,
        prediction: Vec<f64>,
        mass: f64,
        truth_mass: Vec<f64>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for q in &questions {
        let key: Vec<u64> = q.prediction.probs().iter().map(|p| p.to_bits()).collect();
        match groups.iter_mut().find(|g| g.key == key) {
            Some(g) => {
                g.mass += q.weight;
                for (slot, &t) in g.truth_mass.iter_mut().zip(q.truth_classes.probs()) {
                    *slot += q.weight * t;
                }
            }
            None => groups.push(Group {
                key,
                prediction: q.prediction.probs().to_vec(),
                mass: q.weight,
                truth_mass: q
                    .truth_classes
                    .probs()
                    .iter()
                    .map(|&t| q.weight * t)
                    .collect(),
            }),
        }
    }

    let mut gap = 0.0;
    let mut argmax = Vec::with_capacity(groups.len());
    for g in &groups {
        let k = g.prediction.len();
        let improvement = |tau: &[f64]| -> f64 {
            let inner: f64 = g.truth_mass.iter().zip(tau).map(|(&a, &t)| a * t).sum();
            let normalizer: f64 = g
                .prediction
                .iter()
                .zip(tau)
                .map(|(&p, &t)| p * t.exp())
                .sum();
            inner - g.mass * normalizer.ln()
        };
        let mut tau = vec![0.0f64; k];
        let mut current = improvement(&tau);
        for _sweep in 0..100 {
            let before = current;
            for coord in 0..k {
                let frozen = tau.clone();
                let objective = |t: f64| {
                    let mut candidate = frozen.clone();
                    candidate[coord] = t;
                    improvement(&candidate)
                };
                let (t_star, value) = maximize_scalar(&objective, -1.0, 1.0);
                if value > current {
                    tau[coord] = t_star;
                    current = value;
                }
            }
            if current - before < 1e-12 {
                break;
            }
        }
        gap += current.max(0.0);
        argmax.push(LevelOptimum {
            level: serde_json::to_string(&g.prediction).expect("finite probabilities"),
            tau,
            mass: g.mass,
        });
    }
    Ok(GapResult {
        base_loss,
        best_perturbed_loss: base_loss - gap,
        gap,
        argmax,
    })
}

/// A weighted dataset of categorical predictions and one-hot outcomes.
pub type CategoricalDataset = [(CategoricalDistribution, OneHot, f64)];

/// Confidence calibration error of a categorical dataset under weight
/// functions bounded by `bound`: `bound · Σ_levels mass·|residual|`.
pub fn confidence_ce_with_bound(predictions: &CategoricalDataset, bound: f64) -> Result<f64> {
    let levels = dataset_levels(predictions)?;
    Ok(bound
        * levels
            .iter()
            .map(|l| (l.hit_mass - l.mass * l.confidence).abs())
            .sum::<f64>())
}

struct DatasetLevel {
    confidence: f64,
    mass: f64,
    hit_mass: f64,
}

fn dataset_levels(predictions: &CategoricalDataset) -> Result<Vec<DatasetLevel>> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput {
            what: "categorical dataset",
        });
    }
    let total: f64 = predictions.iter().map(|(_, _, w)| w).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized {
            sum: total,
            tol: 1e-9,
        });
    }
    let mut levels: Vec<(u64, DatasetLevel)> = Vec::new();
    for (f, y, w) in predictions {
        if y.dimension != f.dim() {
            return Err(Error::DimensionMismatch {
                left: y.dimension,
                right: f.dim(),
            });
        }
        let top = f.argmax();
        let v = f.prob(top);
        let hit = if y.index == top { *w } else { 0.0 };
        match levels.iter_mut().find(|(b, _)| *b == v.to_bits()) {
            Some((_, level)) => {
                level.mass += w;
                level.hit_mass += hit;
            }
            None => levels.push((
                v.to_bits(),
                DatasetLevel {
                    confidence: v,
                    mass: *w,
                    hit_mass: hit,
                },
            )),
        }
    }
    let mut out: Vec<DatasetLevel> = levels.into_iter().map(|(_, l)| l).collect();
    out.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
    Ok(out)
}

/// The two-sided bound check `½·CE² − tol ≤ λ·Gap ≤ CE + tol` on one
/// categorical dataset. A violated bound is reported, not raised.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub ce: f64,
    pub gap: f64,
    pub lambda: f64,
    pub lambda_gap: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub tol: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub passed: bool,
}

/// Compute the confidence-family calibration error and the dual
/// post-processing gap (logit shifts `β·τ(v*)·e_{k*}` with
/// `β ∈ [−1/λ, 1/λ]`, which decouples into one coefficient per confidence
/// level), then check the smoothness bounds.
pub fn verify_quantitative_bounds(
    predictions: &CategoricalDataset,
    loss: &dyn ProperLoss,
) -> Result<BoundsReport> {
    const TOL: f64 = 1e-6;
    let lambda = loss.smoothness();
    let ce = confidence_ce_with_bound(predictions, 1.0)?;
    let levels = dataset_levels(predictions)?;
    let reach = 1.0 / lambda;
    let mut gap = 0.0;
    for level in &levels {
        let objective =
            |c: f64| level_improvement(c, level.confidence, level.mass, level.hit_mass);
        let (_, improvement) = maximize_scalar(&objective, -reach, reach);
        gap += improvement;
    }
    let lambda_gap = lambda * gap;
    let lower_bound = 0.5 * ce * ce;
    let upper_bound = ce;
    let lower_ok = lower_bound - TOL <= lambda_gap;
    let upper_ok = lambda_gap <= upper_bound + TOL;
    Ok(BoundsReport {
        ce,
        gap,
        lambda,
        lambda_gap,
        lower_bound,
        upper_bound,
        tol: TOL,
        lower_ok,
        upper_ok,
        passed: lower_ok && upper_ok,
    })
}

/// Mean semantic entropy `E_x[H(π_x)]` of the model class distributions.
pub fn semantic_entropy(inst: &ToyInstance) -> Result<f64> {
    let questions = question_calibrations(inst)?;
    Ok(questions
        .iter()
        .map(|q| q.weight * class_entropy(&q.prediction))
        .sum())
}

/// `E_x[KL(π_x ‖ probe_x)]`: how far a per-question probe is from the
/// model's own class distribution.
pub fn kl_gap_to_optimality(
    inst: &ToyInstance,
    probe: &[CategoricalDistribution],
) -> Result<f64> {
    let questions = question_calibrations(inst)?;
    if probe.len() != questions.len() {
        return Err(Error::DimensionMismatch {
            left: probe.len(),
            right: questions.len(),
        });
    }
    let mut total = 0.0;
    for (q, probe_x) in questions.iter().zip(probe) {
        total += q.weight * kl_divergence(&q.prediction, probe_x)?;
    }
    Ok(total)
}

/// `E_{x, z∼p_x}[−log probe_x(B(z))]`: the sequence-enumeration route to the
/// probe's class log-loss. Subtracting [`semantic_entropy`] recovers
/// [`kl_gap_to_optimality`] exactly.
pub fn probe_class_nll(inst: &ToyInstance, probe: &[CategoricalDistribution]) -> Result<f64> {
    if probe.len() != inst.questions().len() {
        return Err(Error::DimensionMismatch {
            left: probe.len(),
            right: inst.questions().len(),
        });
    }
    let mut total = 0.0;
    for (q, probe_x) in inst.questions().iter().zip(probe) {
        if probe_x.dim() != q.collapse.num_classes() {
            return Err(Error::DimensionMismatch {
                left: probe_x.dim(),
                right: q.collapse.num_classes(),
            });
        }
        let p = q.model.enumerate_distribution();
        let mut nll = 0.0;
        for (z, &pz) in p.probs().iter().enumerate() {
            if pz == 0.0 {
                continue;
            }
            let class_prob = probe_x.prob(q.collapse.class_of(z));
            if class_prob <= 0.0 {
                return Err(Error::InfiniteLoss { index: z });
            }
            nll -= pz * class_prob.ln();
        }
        total += q.weight * nll;
    }
    Ok(total)
}
