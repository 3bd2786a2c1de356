//! The four `semcal` commands as testable functions.

use std::fs;
use std::path::{Path, PathBuf};

use semcal_core::calibmetrics::reliability_curve;
use semcal_core::ingest::{group_pairs, run_pipeline, GenerationRecord, PromptStyle, SampleEntry};
use semcal_core::collapse::pushforward;
use semcal_core::perturb::{tilt, TiltMeasure};
use semcal_core::rng::{self, CounterRng};
use semcal_core::seqmodel::{
    autoregressive_factorization, make_miscalibrated_instance, num_sequences, random_collapse,
    random_model, sequence_index, InstanceSpec, Question, ToyInstance,
};

use crate::checks::{self, FixtureCaps};
use crate::config::GroupBy;
use crate::diagram;
use crate::{CliError, CliResult};

fn data_error(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{context}: {e}"))
}

/// Run the verification suites, print the pass/fail table, optionally write
/// a JSON report. Exit 0 iff everything passed.
pub fn cmd_verify(seed: u64, caps: FixtureCaps, output: Option<&Path>) -> CliResult {
    let results = checks::run_all(seed, caps);
    println!(
        "{:<30} {:>14} {:>4} {:>12}   status",
        "check", "observed", "", "bound"
    );
    for r in &results {
        let relation = match r.direction {
            checks::Direction::AtMost => "<=",
            checks::Direction::AtLeast => ">=",
        };
        println!(
            "{:<30} {:>14.6e} {:>4} {:>12.3e}   {}",
            r.name,
            r.observed,
            relation,
            r.bound,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    let all_passed = results.iter().all(|r| r.passed);
    println!(
        "{} of {} checks passed",
        results.iter().filter(|r| r.passed).count(),
        results.len()
    );
    if let Some(path) = output {
        let json =
            serde_json::to_string_pretty(&results).expect("check results always serialize");
        fs::write(path, json + "\n").map_err(|e| data_error("writing verify report", e))?;
    }
    Ok(if all_passed { 0 } else { 1 })
}

fn sanitize_tag(tag: &str) -> String {
    tag.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// Evaluate a generation log into pair tables, exclusion accounting, and one
/// calibration report per group.
pub fn cmd_eval(
    input: &Path,
    sigma: f64,
    output_dir: &Path,
    group_by: GroupBy,
    strict: bool,
) -> CliResult {
    let text =
        fs::read_to_string(input).map_err(|e| data_error(&format!("reading {}", input.display()), e))?;
    let pipeline = run_pipeline(&text, strict).map_err(|e| data_error("ingesting log", e))?;
    for line in &pipeline.exclusions.malformed_lines {
        eprintln!("warning: skipped malformed line {line}");
    }
    if pipeline.pairs.is_empty() {
        return Err(CliError::Data("no records".to_string()));
    }
    fs::create_dir_all(output_dir).map_err(|e| data_error("creating output directory", e))?;

    let mut pair_lines = String::new();
    for pair in &pipeline.pairs {
        pair_lines.push_str(&serde_json::to_string(pair).expect("pair rows always serialize"));
        pair_lines.push('\n');
    }
    fs::write(output_dir.join("pairs.jsonl"), pair_lines)
        .map_err(|e| data_error("writing pairs.jsonl", e))?;

    let exclusions = serde_json::to_string_pretty(&pipeline.exclusions)
        .expect("exclusion report always serializes");
    fs::write(output_dir.join("exclusions.json"), exclusions + "\n")
        .map_err(|e| data_error("writing exclusions.json", e))?;

    let groups = group_pairs(&pipeline.pairs, group_by == GroupBy::DatasetTag)
        .map_err(|e| data_error("grouping pairs", e))?;
    for (tag, pairs) in &groups {
        let report = reliability_curve(pairs, sigma).map_err(|e| data_error("building report", e))?;
        let filename = match group_by {
            GroupBy::None => "report.json".to_string(),
            GroupBy::DatasetTag => format!("report_{}.json", sanitize_tag(tag)),
        };
        fs::write(output_dir.join(&filename), report.to_json() + "\n")
            .map_err(|e| data_error("writing report", e))?;
        println!(
            "{tag}: {} pairs, smECE {:.4}, mean confidence {:.4}, mean accuracy {:.4} -> {filename}",
            pairs.len(),
            report.smece,
            report.mean_confidence,
            report.mean_accuracy,
        );
    }
    Ok(0)
}

/// Render a written calibration report as an SVG reliability diagram.
pub fn cmd_diagram(input: &Path, output: &Path) -> CliResult {
    let text =
        fs::read_to_string(input).map_err(|e| data_error(&format!("reading {}", input.display()), e))?;
    let report = semcal_core::calibmetrics::CalibrationReport::from_json(&text)
        .map_err(|e| data_error("parsing report", e))?;
    fs::write(output, diagram::render(&report)).map_err(|e| data_error("writing diagram", e))?;
    println!("wrote {}", output.display());
    Ok(0)
}

/// Parameters of a toy simulation run.
#[derive(Debug, Clone)]
pub struct SimulateParams {
    pub seed: u64,
    pub questions: usize,
    pub samples: usize,
    pub vocab: usize,
    pub length: usize,
    pub bias: Option<f64>,
    pub output: PathBuf,
}

/// Classes used by simulated instances.
const SIM_CLASSES: usize = 3;

/// Per-question top-class confidence band for calibrated simulations.
/// Keeping confidences well above 1/2 keeps the plurality vote unbiased at
/// small sample counts, so finite-sample noise scales down with M.
const SIM_CONFIDENCE: (f64, f64) = (0.86, 0.96);

/// A calibrated instance whose per-question top-class confidence is pinned
/// inside [`SIM_CONFIDENCE`]: a random model is tilted toward the target
/// class masses (an exact class-mass change) and refactored into
/// conditional tables; the truth then copies the class masses with a random
/// distribution inside each class.
fn pinned_confidence_instance(
    spec: &InstanceSpec,
    band: (f64, f64),
    seed: u64,
) -> Result<ToyInstance, CliError> {
    let build = || -> Result<ToyInstance, semcal_core::Error> {
        let n = num_sequences(spec.vocab_size, spec.length)?;
        let mut weight_rng = CounterRng::from_parts(seed, &[0x5729]);
        let raw_weights: Vec<f64> = (0..spec.num_questions)
            .map(|_| weight_rng.next_open_f64().exp())
            .collect();
        let total: f64 = raw_weights.iter().sum();
        let questions = (0..spec.num_questions)
            .map(|qi| {
                let qkey = rng::derive_key(seed, &[qi as u64]);
                let mut qrng = CounterRng::from_parts(qkey, &[0x7A11]);
                let flat = random_model(spec.vocab_size, spec.length, qkey)?;
                let collapse = random_collapse(n, spec.num_classes, qkey)?;
                let base = flat.enumerate_distribution();
                let classes = pushforward(&base, &collapse)?;
                let top = classes.argmax();
                let target_top = band.0 + (band.1 - band.0) * qrng.next_f64();
                let rest_scale = (1.0 - target_top) / (1.0 - classes.prob(top));
                let log_ratio: Vec<f64> = (0..spec.num_classes)
                    .map(|k| {
                        if k == top {
                            (target_top / classes.prob(top)).ln()
                        } else {
                            rest_scale.ln()
                        }
                    })
                    .collect();
                let mu = TiltMeasure::new(
                    (0..n).map(|z| log_ratio[collapse.class_of(z)]).collect(),
                )?;
                let sharpened = tilt(&base, &mu)?;
                let model = autoregressive_factorization(&sharpened)?;
                let truth = semcal_core::seqmodel::calibrated_truth(&model, &collapse, qkey);
                Ok(Question {
                    id: format!("q{qi:05}"),
                    weight: raw_weights[qi] / total,
                    model,
                    truth,
                    collapse,
                })
            })
            .collect::<Result<Vec<_>, semcal_core::Error>>()?;
        ToyInstance::new(questions)
    };
    build().map_err(|e| CliError::Usage(format!("building instance: {e}")))
}

fn simulated_instance(params: &SimulateParams) -> Result<ToyInstance, CliError> {
    let n = num_sequences(params.vocab, params.length)
        .map_err(|e| CliError::Usage(format!("size cap rejected: {e}")))?;
    let spec = InstanceSpec {
        vocab_size: params.vocab,
        length: params.length,
        num_classes: SIM_CLASSES.min(n),
        num_questions: params.questions,
    };
    match params.bias {
        // Biasing needs headroom above the top class, so biased simulations
        // keep the flat models.
        Some(bias) => make_miscalibrated_instance(&spec, bias, params.seed)
            .map_err(|e| CliError::Usage(format!("building instance: {e}"))),
        None => pinned_confidence_instance(&spec, SIM_CONFIDENCE, params.seed),
    }
}

/// Decide per question whether the ground truth lands in the model's top
/// class, by error diffusion over the confidence-sorted order: running the
/// accumulator over the per-question hit masses keeps every contiguous
/// confidence window's realized hit count within one of its target mass.
/// The simulated log then realizes the instance's calibration exactly at
/// every confidence scale, leaving the per-sample binomial noise (which the
/// sample-count bounds are about) as the only stochastic term.
fn diffused_hits(hit_masses: &[f64], seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..hit_masses.len()).collect();
    order.sort_by(|&a, &b| hit_masses[a].total_cmp(&hit_masses[b]).then(a.cmp(&b)));
    let mut carry = CounterRng::from_parts(seed, &[0x64696666]).next_f64();
    let mut hits = vec![false; hit_masses.len()];
    for &q in &order {
        carry += hit_masses[q];
        if carry >= 1.0 {
            hits[q] = true;
            carry -= 1.0;
        }
    }
    hits
}

/// Draw a sequence from the truth distribution conditioned on landing
/// inside (or outside) `front_class`.
fn sample_truth_conditional(
    probs: &[f64],
    collapse: &semcal_core::collapse::CollapsingFunction,
    front_class: usize,
    inside: bool,
    u: f64,
) -> usize {
    let members: Vec<usize> = (0..probs.len())
        .filter(|&z| (collapse.class_of(z) == front_class) == inside)
        .collect();
    let total: f64 = members.iter().map(|&z| probs[z]).sum();
    let target = u * total;
    let mut acc = 0.0;
    for &z in &members {
        acc += probs[z];
        if target < acc {
            return z;
        }
    }
    *members.last().expect("conditioning side is nonempty")
}

fn class_label(class: usize) -> String {
    format!("class-{class}")
}

/// Build a toy instance, sample it, and write a generation log whose
/// canonical forms encode the class ids.
pub fn cmd_simulate(params: &SimulateParams) -> CliResult {
    let lines = simulate_to_log_text(params)?;
    fs::write(&params.output, lines).map_err(|e| data_error("writing log", e))?;
    println!(
        "wrote {} questions x {} samples to {}",
        params.questions,
        params.samples,
        params.output.display()
    );
    Ok(0)
}

/// Simulate straight into log text without touching disk; the acceptance
/// tests use this to sweep sample counts.
pub fn simulate_to_log_text(params: &SimulateParams) -> Result<String, CliError> {
    let inst = simulated_instance(params)?;
    let predictions: Vec<semcal_core::prob::CategoricalDistribution> = inst
        .questions()
        .iter()
        .map(|q| pushforward(&q.model.enumerate_distribution(), &q.collapse))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("building instance: {e}")))?;
    // Per-question probability that the truth hits the model's top class.
    let hit_masses: Vec<f64> = inst
        .questions()
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            let top = predictions[qi].argmax();
            q.truth
                .probs()
                .iter()
                .enumerate()
                .filter(|(z, _)| q.collapse.class_of(*z) == top)
                .map(|(_, &p)| p)
                .sum()
        })
        .collect();
    let hits = diffused_hits(&hit_masses, params.seed);
    let mut lines = String::new();
    for (qi, q) in inst.questions().iter().enumerate() {
        let qid_hash = rng::hash_str(&q.id);
        let top_class = predictions[qi].argmax();
        let single_class = q.collapse.num_classes() == 1;
        let truth_u = CounterRng::from_parts(params.seed, &[qid_hash, 0x74]).next_f64();
        let truth_class = q.collapse.class_of(sample_truth_conditional(
            q.truth.probs(),
            &q.collapse,
            top_class,
            hits[qi] || single_class,
            truth_u,
        ));
        let sample_key = rng::derive_key(params.seed, &[qid_hash, 0x73]);
        let samples: Vec<SampleEntry> = q
            .model
            .sample_sequences(params.samples, sample_key)
            .into_iter()
            .map(|tokens| {
                let class = q
                    .collapse
                    .class_of(sequence_index(&tokens, inst.vocab_size()));
                SampleEntry {
                    text: class_label(class),
                    canonical: Some(class_label(class)),
                }
            })
            .collect();
        let record = GenerationRecord {
            question_id: q.id.clone(),
            dataset_tag: "toy".to_string(),
            prompt_style: PromptStyle::Concise,
            ground_truth_text: class_label(truth_class),
            ground_truth_canonical: Some(class_label(truth_class)),
            samples,
            judge_verdicts: None,
        };
        lines.push_str(&record.to_json_line());
        lines.push('\n');
    }
    Ok(lines)
}
