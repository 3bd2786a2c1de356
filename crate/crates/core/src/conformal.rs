//! Top-probability conformal sets and exact coverage on toy instances.
//!
//! Given a class predictor `f`, the conformal set at miscoverage `alpha`
//! collects the highest-predicted-probability classes until their mass
//! reaches `1 − alpha`. On a toy instance the coverage of these sets is an
//! exact enumeration, and the associated indicator-weight residual links
//! coverage back to weighted calibration: a calibrated predictor covers at
//! every level.

use serde::Serialize;

use crate::calibmetrics::question_calibrations;
use crate::prob::CategoricalDistribution;
use crate::seqmodel::ToyInstance;
use crate::{Error, Result};

/// A top-probability prediction set at one miscoverage level.
#[derive(Debug, Clone, Serialize)]
pub struct ConformalSet {
    pub alpha: f64,
    /// Largest threshold whose super-level set reaches mass `1 − alpha`.
    pub threshold: f64,
    /// Class ids with `f_k ≥ threshold`, ascending. Ties at the threshold
    /// are all included, which can overshoot the target mass.
    pub members: Vec<usize>,
    /// Total predicted mass of the members.
    pub mass: f64,
}

impl ConformalSet {
    pub fn contains(&self, class: usize) -> bool {
        self.members.binary_search(&class).is_ok()
    }
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter {
            what: format!("alpha {alpha} outside [0, 1]"),
        });
    }
    Ok(())
}

/// The set of highest-probability classes whose mass reaches `1 − alpha`:
/// the threshold is the largest attained probability value `t` with
/// `Σ_{f_k ≥ t} f_k ≥ 1 − alpha`, and every class at or above it is a
/// member.
pub fn conformal_set(f: &CategoricalDistribution, alpha: f64) -> Result<ConformalSet> {
    validate_alpha(alpha)?;
    let target = 1.0 - alpha;
    let mut values: Vec<f64> = f.probs().to_vec();
    values.sort_by(|a, b| b.total_cmp(a));
    values.dedup();
    // Walk candidate thresholds from the largest down; the first (largest)
    // attained value whose super-level mass reaches the target wins.
    let mut threshold = values[values.len() - 1];
    for &t in &values {
        let mass: f64 = f.probs().iter().filter(|&&p| p >= t).sum();
        if mass >= target {
            threshold = t;
            break;
        }
    }
    let members: Vec<usize> = (0..f.dim()).filter(|&k| f.prob(k) >= threshold).collect();
    let mass = members.iter().map(|&k| f.prob(k)).sum();
    Ok(ConformalSet {
        alpha,
        threshold,
        members,
        mass,
    })
}

/// Exact `Pr[B(y) ∈ conformal_set(π_x, alpha)]` over the instance.
pub fn coverage(inst: &ToyInstance, alpha: f64) -> Result<f64> {
    validate_alpha(alpha)?;
    let questions = question_calibrations(inst)?;
    let mut covered = 0.0;
    for q in &questions {
        let set = conformal_set(&q.prediction, alpha)?;
        let hit: f64 = set.members.iter().map(|&k| q.truth_classes.prob(k)).sum();
        covered += q.weight * hit;
    }
    Ok(covered)
}

/// `|E[(ỹ − π_x)·1_{T_alpha(π_x)}]|` at the class level: the residual of the
/// conformal indicator weight family. Zero for calibrated instances.
pub fn conformal_weight_residual(inst: &ToyInstance, alpha: f64) -> Result<f64> {
    validate_alpha(alpha)?;
    let questions = question_calibrations(inst)?;
    let mut delta = 0.0;
    for q in &questions {
        let set = conformal_set(&q.prediction, alpha)?;
        let inner: f64 = set
            .members
            .iter()
            .map(|&k| q.truth_classes.prob(k) - q.prediction.prob(k))
            .sum();
        delta += q.weight * inner;
    }
    Ok(delta.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collapse::CollapsingFunction;
    use crate::seqmodel::{
        make_calibrated_instance, make_miscalibrated_instance, InstanceSpec, Question,
        SequenceDistribution, ToyAutoregressiveModel,
    };

    fn dist(probs: &[f64]) -> CategoricalDistribution {
        CategoricalDistribution::new(probs.to_vec()).unwrap()
    }

    #[test]
    fn alpha_zero_includes_all_positive_classes() {
        let f = dist(&[0.5, 0.0, 0.5]);
        let set = conformal_set(&f, 0.0).unwrap();
        assert_eq!(set.members, vec![0, 2]);
        assert!((set.mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sort_and_accumulate_hand_example() {
        let f = dist(&[0.6, 0.3, 0.1]);
        let set = conformal_set(&f, 0.3).unwrap();
        assert_eq!(set.members, vec![0, 1]);
        assert!((set.threshold - 0.3).abs() < 1e-15);
        assert!((set.mass - 0.9).abs() < 1e-15);
    }

    #[test]
    fn uniform_distribution_keeps_every_class_at_alpha_zero() {
        let f = CategoricalDistribution::uniform(5).unwrap();
        let set = conformal_set(&f, 0.0).unwrap();
        assert_eq!(set.members, (0..5).collect::<Vec<_>>());
    }

    #[test]
    fn threshold_ties_are_all_included() {
        let f = dist(&[0.4, 0.3, 0.3]);
        // target mass 0.6: threshold lands on 0.3 and both tied classes
        // enter, overshooting to 1.0.
        let set = conformal_set(&f, 0.4).unwrap();
        assert_eq!(set.members, vec![0, 1, 2]);
        assert!((set.mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        let f = dist(&[1.0]);
        assert!(conformal_set(&f, -0.1).is_err());
        assert!(conformal_set(&f, 1.5).is_err());
    }

    #[test]
    fn members_shrink_as_alpha_grows() {
        let f = dist(&[0.45, 0.25, 0.2, 0.1]);
        let alphas = [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.0];
        for pair in alphas.windows(2) {
            let big = conformal_set(&f, pair[0]).unwrap();
            let small = conformal_set(&f, pair[1]).unwrap();
            for k in &small.members {
                assert!(big.members.contains(k), "alpha {} ⊄ {}", pair[1], pair[0]);
            }
        }
    }

    #[test]
    fn member_mass_always_reaches_the_target() {
        let f = dist(&[0.37, 0.23, 0.2, 0.12, 0.08]);
        for i in 0..=20 {
            let alpha = i as f64 / 20.0;
            let set = conformal_set(&f, alpha).unwrap();
            assert!(set.mass >= 1.0 - alpha - 1e-12, "alpha {alpha}");
        }
    }

    #[test]
    fn calibrated_instances_cover_at_every_level() {
        let spec = InstanceSpec {
            vocab_size: 3,
            length: 2,
            num_classes: 4,
            num_questions: 6,
        };
        let inst = make_calibrated_instance(&spec, 17).unwrap();
        for alpha in [0.05, 0.1, 0.2, 0.5] {
            let c = coverage(&inst, alpha).unwrap();
            assert!(c >= 1.0 - alpha - 1e-12, "alpha {alpha}: coverage {c}");
        }
    }

    #[test]
    fn alpha_one_coverage_is_trivially_satisfied() {
        let spec = InstanceSpec {
            vocab_size: 2,
            length: 2,
            num_classes: 2,
            num_questions: 2,
        };
        let inst = make_calibrated_instance(&spec, 3).unwrap();
        assert!(coverage(&inst, 1.0).unwrap() >= 0.0);
    }

    #[test]
    fn alpha_zero_coverage_is_total_for_positive_predictions() {
        // Random calibrated instances have strictly positive pushforwards,
        // so the full set catches all truth mass.
        let spec = InstanceSpec {
            vocab_size: 3,
            length: 2,
            num_classes: 3,
            num_questions: 3,
        };
        let inst = make_calibrated_instance(&spec, 29).unwrap();
        let c = coverage(&inst, 0.0).unwrap();
        assert!((c - 1.0).abs() < 1e-12, "coverage {c}");
    }

    #[test]
    fn residual_vanishes_on_calibrated_instances() {
        let spec = InstanceSpec {
            vocab_size: 3,
            length: 2,
            num_classes: 3,
            num_questions: 5,
        };
        let inst = make_calibrated_instance(&spec, 41).unwrap();
        for alpha in [0.05, 0.2, 0.5] {
            assert!(conformal_weight_residual(&inst, alpha).unwrap() < 1e-12);
        }
    }

    #[test]
    fn residual_matches_a_hand_expanded_inner_product() {
        // Single question, prediction (0.6, 0.3, 0.1), truth (0.4, 0.35, 0.25).
        let tables = vec![vec![dist(&[0.6, 0.3, 0.1])]];
        let model = ToyAutoregressiveModel::new(3, 1, tables).unwrap();
        let collapse = CollapsingFunction::new(3, vec![0, 1, 2]).unwrap();
        let truth = SequenceDistribution::new(3, 1, vec![0.4, 0.35, 0.25]).unwrap();
        let inst = ToyInstance::new(vec![Question {
            id: "q".to_string(),
            weight: 1.0,
            model,
            truth,
            collapse,
        }])
        .unwrap();
        // At alpha = 0.3 the set is {0, 1}: residual = (0.4−0.6)+(0.35−0.3).
        let r = conformal_weight_residual(&inst, 0.3).unwrap();
        assert!((r - 0.15).abs() < 1e-12, "residual {r}");
        // Sign flips leave the absolute residual unchanged: the mirrored
        // miscalibration gives the same value.
        let tables = vec![vec![dist(&[0.6, 0.3, 0.1])]];
        let model = ToyAutoregressiveModel::new(3, 1, tables).unwrap();
        let collapse = CollapsingFunction::new(3, vec![0, 1, 2]).unwrap();
        let truth = SequenceDistribution::new(3, 1, vec![0.5, 0.25, 0.25]).unwrap();
        let flipped = ToyInstance::new(vec![Question {
            id: "q".to_string(),
            weight: 1.0,
            model,
            truth,
            collapse,
        }])
        .unwrap();
        let r2 = conformal_weight_residual(&flipped, 0.3).unwrap();
        assert!((r2 - 0.15).abs() < 1e-12, "residual {r2}");
    }

    #[test]
    fn small_residual_implies_coverage() {
        let spec = InstanceSpec {
            vocab_size: 3,
            length: 2,
            num_classes: 3,
            num_questions: 4,
        };
        for seed in 0..6u64 {
            let inst = if seed % 2 == 0 {
                make_calibrated_instance(&spec, 70 + seed).unwrap()
            } else {
                make_miscalibrated_instance(&spec, 0.15, 70 + seed).unwrap()
            };
            for alpha in [0.05, 0.1, 0.2, 0.3, 0.5] {
                let residual = conformal_weight_residual(&inst, alpha).unwrap();
                if residual <= 1e-10 {
                    let c = coverage(&inst, alpha).unwrap();
                    assert!(
                        c >= 1.0 - alpha - 1e-10,
                        "seed {seed} alpha {alpha}: coverage {c}"
                    );
                }
            }
        }
    }
}
