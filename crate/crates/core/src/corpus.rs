//! Data model for problems, annotations and curated instances, plus JSONL
//! ingestion and deterministic splitting.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;
use crate::MASK_TAG;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: bad or missing field `{field}`")]
    Schema { line: usize, field: String },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bad split fractions: {0}")]
    BadFractions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Proof,
    Computation,
}

/// A problem statement, its reasoning trajectory and (for computation
/// problems) the reference answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub statement: String,
    pub trajectory: Vec<String>,
    #[serde(default)]
    pub final_answer: String,
    pub kind: ProblemKind,
    #[serde(default)]
    pub source_tag: String,
}

impl ProblemRecord {
    /// Trajectory segments joined by blank lines.
    pub fn flattened(&self) -> String {
        self.trajectory.join("\n\n")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id must be non-empty".into());
        }
        if self.trajectory.is_empty() {
            return Err(format!("record `{}` has an empty trajectory", self.id));
        }
        if self.kind == ProblemKind::Computation && self.final_answer.trim().is_empty() {
            return Err(format!(
                "computation record `{}` has no final answer",
                self.id
            ));
        }
        Ok(())
    }
}

/// Key formulas (most important first) and independent logical steps of a
/// trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrajectoryAnnotation {
    pub problem_id: String,
    #[serde(default)]
    pub theorems: Vec<String>,
    #[serde(default)]
    pub steps: Vec<String>,
}

/// A trajectory with formulas replaced by [`MASK_TAG`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInstance {
    pub instance_id: String,
    pub problem_id: String,
    pub masked_text: String,
    /// Hidden formulas in the order their tags appear.
    pub ground_truths: Vec<String>,
    pub mask_count: usize,
}

impl MaskedInstance {
    pub fn check(&self) -> Result<(), String> {
        let tags = self.masked_text.matches(MASK_TAG).count();
        if self.mask_count == 0 {
            return Err("mask_count must be at least 1".into());
        }
        if tags != self.mask_count || self.ground_truths.len() != self.mask_count {
            return Err(format!(
                "tag count {tags}, mask_count {}, truths {} disagree",
                self.mask_count,
                self.ground_truths.len()
            ));
        }
        Ok(())
    }

    /// Substitutes the ground truths back into the tags, in order.
    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.masked_text.len());
        let mut rest = self.masked_text.as_str();
        for truth in &self.ground_truths {
            match rest.find(MASK_TAG) {
                Some(at) => {
                    out.push_str(&rest[..at]);
                    out.push_str(truth);
                    rest = &rest[at + MASK_TAG.len()..];
                }
                None => break,
            }
        }
        out.push_str(rest);
        out
    }
}

/// Steps presented out of order.
///
/// `true_order[r]` is the presentation index of the step that belongs at
/// reference position `r`, which is exactly the sequence a perfect answer
/// lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorderInstance {
    pub instance_id: String,
    pub problem_id: String,
    pub shuffled_steps: Vec<String>,
    pub true_order: Vec<usize>,
    pub n: usize,
}

impl ReorderInstance {
    pub fn check(&self) -> Result<(), String> {
        if self.n < 3 {
            return Err(format!("need at least 3 steps, got {}", self.n));
        }
        if self.shuffled_steps.len() != self.n || !is_permutation(&self.true_order, self.n) {
            return Err("true_order is not a permutation of the presented steps".into());
        }
        Ok(())
    }

    /// Step texts in reference order with the `Step i:` prefixes removed.
    pub fn reference_steps(&self) -> Vec<String> {
        self.true_order
            .iter()
            .map(|&j| strip_step_prefix(&self.shuffled_steps[j]).to_string())
            .collect()
    }
}

pub(crate) fn strip_step_prefix(s: &str) -> &str {
    if let Some(rest) = s.strip_prefix("Step ") {
        if let Some(colon) = rest.find(": ") {
            if rest[..colon].chars().all(|c| c.is_ascii_digit()) {
                return &rest[colon + 2..];
            }
        }
    }
    s
}

pub fn is_permutation(order: &[usize], n: usize) -> bool {
    if order.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &v in order {
        if v >= n || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    true
}

const REQUIRED_FIELDS: [(&str, FieldKind); 4] = [
    ("id", FieldKind::Str),
    ("statement", FieldKind::Str),
    ("trajectory", FieldKind::StrList),
    ("kind", FieldKind::Str),
];
const OPTIONAL_FIELDS: [(&str, FieldKind); 2] =
    [("final_answer", FieldKind::Str), ("source_tag", FieldKind::Str)];

#[derive(Clone, Copy)]
enum FieldKind {
    Str,
    StrList,
}

fn field_ok(value: &serde_json::Value, kind: FieldKind) -> bool {
    match kind {
        FieldKind::Str => value.is_string(),
        FieldKind::StrList => value
            .as_array()
            .is_some_and(|a| a.iter().all(|v| v.is_string())),
    }
}

/// Parses JSONL text into records. `line` numbers in errors are 1-based.
pub fn parse_records(text: &str) -> Result<Vec<ProblemRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| CorpusError::Invalid {
                line,
                reason: format!("not JSON: {e}"),
            })?;
        if !value.is_object() {
            return Err(CorpusError::Invalid {
                line,
                reason: "expected a JSON object".into(),
            });
        }
        for (field, kind) in REQUIRED_FIELDS {
            if !value.get(field).is_some_and(|v| field_ok(v, kind)) {
                return Err(CorpusError::Schema {
                    line,
                    field: field.into(),
                });
            }
        }
        for (field, kind) in OPTIONAL_FIELDS {
            if value.get(field).is_some_and(|v| !field_ok(v, kind)) {
                return Err(CorpusError::Schema {
                    line,
                    field: field.into(),
                });
            }
        }
        let record: ProblemRecord =
            serde_json::from_value(value).map_err(|_| CorpusError::Schema {
                line,
                field: "kind".into(),
            })?;
        record
            .validate()
            .map_err(|reason| CorpusError::Invalid { line, reason })?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_records(path: &Path) -> Result<Vec<ProblemRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_records(&text)
}

pub fn parse_annotations(text: &str) -> Result<Vec<TrajectoryAnnotation>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Invalid {
                line: idx + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    pub record_ids: Vec<String>,
    pub seed: u64,
    pub fractions: Vec<f64>,
}

/// Sizes by largest-remainder rounding; ties go to the lower split index.
fn split_sizes(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Shuffles the records under `seed` and cuts them into disjoint splits.
pub fn split_dataset(
    records: &[ProblemRecord],
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<DatasetSplit>, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(CorpusError::BadFractions(
            "fractions must be positive".into(),
        ));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadFractions(format!("sum is {total}, not 1")));
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    ids.shuffle(&mut rng_for(seed, "split_dataset"));
    let sizes = split_sizes(ids.len(), fractions);
    let mut rest = ids.as_slice();
    let mut out = Vec::with_capacity(sizes.len());
    for (i, size) in sizes.into_iter().enumerate() {
        let (head, tail) = rest.split_at(size);
        rest = tail;
        out.push(DatasetSplit {
            name: format!("split_{i}"),
            record_ids: head.to_vec(),
            seed,
            fractions: fractions.to_vec(),
        });
    }
    Ok(out)
}
