//! Turn recorded generation logs into (confidence, outcome) pairs.
//!
//! A log is newline-delimited JSON, one [`GenerationRecord`] per line. Each
//! record carries a question, its sampled generations with optional
//! canonical forms, the ground-truth answer, and optional pairwise judge
//! verdicts recorded by whoever produced the log — no model or judge is
//! ever called here.
//!
//! Per record the pipeline is: exclusion filtering (concise math answers
//! that run long), canonicalization via [`normalize_answer`], equivalence
//! clustering (connected components over canonical-form equality plus
//! affirmative verdicts), plurality voting, and the final
//! (plurality frequency, plurality-matches-truth) pair. Everything is
//! deterministic: byte-identical inputs give byte-identical outputs.

use serde::{Deserialize, Serialize};

use crate::calibmetrics::PredictionOutcomePair;
use crate::collapse::plurality_from_samples;
use crate::{Error, Result};

/// Response style the record's prompt asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    Concise,
    Sentence,
    Cot,
}

/// One sampled generation, with its canonical short form when the log
/// producer extracted one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical: Option<String>,
}

/// A recorded judge decision on whether two samples are semantically
/// equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub a: usize,
    pub b: usize,
    pub equivalent: bool,
}

/// One question's worth of recorded generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub question_id: String,
    pub dataset_tag: String,
    pub prompt_style: PromptStyle,
    pub ground_truth_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_canonical: Option<String>,
    pub samples: Vec<SampleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_verdicts: Option<Vec<JudgeVerdict>>,
}

impl GenerationRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization cannot fail")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Data(format!("generation record: {e}")))
    }
}

/// Datasets whose tags mark them as math-style: math normalization and the
/// concise-answer length exclusion apply.
pub fn is_math_tag(tag: &str) -> bool {
    let lower = tag.to_lowercase();
    lower.contains("math") || lower.contains("gsm")
}

/// Lower-case, trim, and collapse interior whitespace; in math mode also
/// drop `\left`/`\right`, surrounding dollar signs, trailing periods, and
/// thousands-separator commas inside integers. Idempotent.
pub fn normalize_answer(text: &str, math_mode: bool) -> String {
    let mut s = text.to_lowercase();
    if math_mode {
        s = s.replace("\\left", "");
        s = s.replace("\\right", "");
        loop {
            let mut candidate = s.trim().to_string();
            if let Some(stripped) = candidate.strip_prefix('$') {
                candidate = stripped.to_string();
            }
            if let Some(stripped) = candidate.strip_suffix('$') {
                candidate = stripped.to_string();
            }
            while candidate.ends_with('.') {
                candidate.pop();
            }
            if candidate == s {
                break;
            }
            s = candidate;
        }
        s = remove_digit_commas(&s);
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Drop a comma when both neighbors are ASCII digits.
fn remove_digit_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ','
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
        {
            continue;
        }
        out.push(c);
    }
    out
}

/// Knobs for [`cluster_with`]. Defaults follow the record's dataset tag.
#[derive(Debug, Clone, Copy)]
pub struct ClusterOptions {
    /// Run canonical forms (provided or derived from the raw text) through
    /// the built-in normalizer. When disabled, every node must carry an
    /// explicit canonical form, used verbatim.
    pub use_normalizer: bool,
    pub math_mode: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            use_normalizer: true,
            math_mode: false,
        }
    }
}

/// Classes assigned to a record's samples and its ground truth. Ids are
/// contiguous from 0, ordered by each cluster's lexicographically smallest
/// canonical form, so they are independent of sample order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterAssignment {
    pub sample_classes: Vec<usize>,
    pub truth_class: usize,
    pub num_classes: usize,
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(len: usize) -> Self {
        Self {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    fn find(&mut self, mut id: usize) -> usize {
        while self.parent[id] != id {
            self.parent[id] = self.parent[self.parent[id]];
            id = self.parent[id];
        }
        id
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            self.parent[ra] = rb;
            self.size[rb] += self.size[ra];
        } else {
            self.parent[rb] = ra;
            self.size[ra] += self.size[rb];
        }
    }
}

/// Cluster with options derived from the record: normalization on, math
/// mode iff the dataset tag is math-tagged.
pub fn cluster(record: &GenerationRecord) -> Result<ClusterAssignment> {
    cluster_with(
        record,
        ClusterOptions {
            use_normalizer: true,
            math_mode: is_math_tag(&record.dataset_tag),
        },
    )
}

/// Connected-component clustering of the record's samples plus its ground
/// truth: nodes are joined when their canonical forms are equal, or when an
/// affirmative judge verdict links them.
pub fn cluster_with(
    record: &GenerationRecord,
    options: ClusterOptions,
) -> Result<ClusterAssignment> {
    if record.samples.is_empty() {
        return Err(Error::EmptyInput {
            what: "record samples",
        });
    }
    let n = record.samples.len();
    let canonical_of = |provided: &Option<String>, text: &str| -> Result<String> {
        if options.use_normalizer {
            let raw = provided.as_deref().unwrap_or(text);
            Ok(normalize_answer(raw, options.math_mode))
        } else {
            provided.clone().ok_or_else(|| {
                Error::Data(format!(
                    "record {}: missing canonical form with normalization disabled",
                    record.question_id
                ))
            })
        }
    };
    // Node n is the ground truth.
    let mut canonicals = Vec::with_capacity(n + 1);
    for sample in &record.samples {
        canonicals.push(canonical_of(&sample.canonical, &sample.text)?);
    }
    canonicals.push(canonical_of(
        &record.ground_truth_canonical,
        &record.ground_truth_text,
    )?);

    let mut uf = UnionFind::new(n + 1);
    {
        // Equal canonical forms share a class: union each node with the
        // first holder of its string.
        let mut first_holder: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
        for (node, canonical) in canonicals.iter().enumerate() {
            match first_holder.entry(canonical.as_str()) {
                std::collections::hash_map::Entry::Occupied(e) => uf.union(*e.get(), node),
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(node);
                }
            }
        }
    }
    if let Some(verdicts) = &record.judge_verdicts {
        for v in verdicts {
            if v.a >= n || v.b >= n {
                return Err(Error::Data(format!(
                    "record {}: verdict index ({}, {}) out of range for {} samples",
                    record.question_id, v.a, v.b, n
                )));
            }
            if v.equivalent {
                uf.union(v.a, v.b);
            }
        }
    }

    // Order clusters by their smallest canonical form.
    let roots: Vec<usize> = (0..=n).map(|i| uf.find(i)).collect();
    let mut smallest: std::collections::HashMap<usize, &str> = std::collections::HashMap::new();
    for (node, &root) in roots.iter().enumerate() {
        let canonical = canonicals[node].as_str();
        smallest
            .entry(root)
            .and_modify(|best| {
                if canonical < *best {
                    *best = canonical;
                }
            })
            .or_insert(canonical);
    }
    let mut reps: Vec<(&str, usize)> = smallest.iter().map(|(&root, &rep)| (rep, root)).collect();
    reps.sort_by(|a, b| a.0.cmp(b.0));
    let class_of_root: std::collections::HashMap<usize, usize> = reps
        .iter()
        .enumerate()
        .map(|(class, &(_, root))| (root, class))
        .collect();

    Ok(ClusterAssignment {
        sample_classes: roots[..n].iter().map(|r| class_of_root[r]).collect(),
        truth_class: class_of_root[&roots[n]],
        num_classes: reps.len(),
    })
}

/// True when a concise math response runs long: more than 15 characters
/// before the first newline.
fn runs_long(text: &str) -> bool {
    text.split('\n').next().unwrap_or("").chars().count() > 15
}

/// Apply the concise-math length exclusion. Returns the surviving record
/// (with judge verdict indices remapped) and the number of removed samples;
/// the record is dropped entirely when nothing survives. Records that are
/// not concise math pass through untouched.
pub fn filter_concise_math(record: GenerationRecord) -> (Option<GenerationRecord>, usize) {
    if record.prompt_style != PromptStyle::Concise || !is_math_tag(&record.dataset_tag) {
        return (Some(record), 0);
    }
    let keep: Vec<bool> = record.samples.iter().map(|s| !runs_long(&s.text)).collect();
    let removed = keep.iter().filter(|&&k| !k).count();
    if removed == 0 {
        return (Some(record), 0);
    }
    if removed == record.samples.len() {
        return (None, removed);
    }
    let mut new_index = vec![usize::MAX; record.samples.len()];
    let mut next = 0;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            new_index[i] = next;
            next += 1;
        }
    }
    let samples = record
        .samples
        .into_iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(s, _)| s)
        .collect();
    let judge_verdicts = record.judge_verdicts.map(|verdicts| {
        verdicts
            .into_iter()
            .filter(|v| {
                v.a < new_index.len()
                    && v.b < new_index.len()
                    && new_index[v.a] != usize::MAX
                    && new_index[v.b] != usize::MAX
            })
            .map(|v| JudgeVerdict {
                a: new_index[v.a],
                b: new_index[v.b],
                equivalent: v.equivalent,
            })
            .collect()
    });
    (
        Some(GenerationRecord {
            samples,
            judge_verdicts,
            ..record
        }),
        removed,
    )
}

/// One evaluated question: the plurality-vote confidence and whether the
/// plurality class matched the ground truth's class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub question_id: String,
    pub dataset_tag: String,
    pub confidence: f64,
    pub outcome: bool,
}

/// What the pipeline skipped and why.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExclusionReport {
    pub lines_read: usize,
    pub records_parsed: usize,
    pub malformed_lines: Vec<usize>,
    pub samples_excluded: usize,
    pub records_dropped: Vec<String>,
}

/// Pair rows plus the exclusion accounting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub pairs: Vec<PairRow>,
    pub exclusions: ExclusionReport,
}

/// Filter, cluster, and vote every record into one pair row each.
pub fn to_pairs(records: Vec<GenerationRecord>) -> Result<PipelineOutput> {
    let mut output = PipelineOutput {
        pairs: Vec::with_capacity(records.len()),
        exclusions: ExclusionReport::default(),
    };
    output.exclusions.records_parsed = records.len();
    for record in records {
        let question_id = record.question_id.clone();
        let (surviving, removed) = filter_concise_math(record);
        output.exclusions.samples_excluded += removed;
        let Some(record) = surviving else {
            output.exclusions.records_dropped.push(question_id);
            continue;
        };
        let assignment = cluster(&record)?;
        let prediction = plurality_from_samples(&assignment.sample_classes)?;
        output.pairs.push(PairRow {
            question_id: record.question_id,
            dataset_tag: record.dataset_tag,
            confidence: prediction.confidence,
            outcome: prediction.top_class == assignment.truth_class,
        });
    }
    Ok(output)
}

/// Parse newline-delimited records. Malformed lines are skipped and their
/// 1-based line numbers reported unless `strict`, which turns the first one
/// into a hard error. Blank lines are ignored.
pub fn parse_jsonl(text: &str, strict: bool) -> Result<(Vec<GenerationRecord>, Vec<usize>, usize)> {
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    let mut lines_read = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines_read += 1;
        match serde_json::from_str::<GenerationRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) => {
                if strict {
                    return Err(Error::Parse {
                        line: idx + 1,
                        msg: e.to_string(),
                    });
                }
                malformed.push(idx + 1);
            }
        }
    }
    Ok((records, malformed, lines_read))
}

/// The whole text-to-pairs pipeline.
pub fn run_pipeline(text: &str, strict: bool) -> Result<PipelineOutput> {
    let (records, malformed, lines_read) = parse_jsonl(text, strict)?;
    let mut output = to_pairs(records)?;
    output.exclusions.lines_read = lines_read;
    output.exclusions.malformed_lines = malformed;
    Ok(output)
}

/// Group pair rows for reporting: one group per dataset tag (sorted), or a
/// single "all" group. Weights are uniform within each group.
pub fn group_pairs(
    pairs: &[PairRow],
    by_dataset_tag: bool,
) -> Result<Vec<(String, Vec<PredictionOutcomePair>)>> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput {
            what: "pair rows",
        });
    }
    let mut groups: Vec<(String, Vec<&PairRow>)> = Vec::new();
    for pair in pairs {
        let key = if by_dataset_tag {
            pair.dataset_tag.clone()
        } else {
            "all".to_string()
        };
        match groups.iter_mut().find(|(tag, _)| *tag == key) {
            Some((_, rows)) => rows.push(pair),
            None => groups.push((key, vec![pair])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    groups
        .into_iter()
        .map(|(tag, rows)| {
            let observations: Vec<(f64, bool)> =
                rows.iter().map(|r| (r.confidence, r.outcome)).collect();
            Ok((tag, crate::calibmetrics::uniform_pairs(&observations)?))
        })
        .collect()
}
