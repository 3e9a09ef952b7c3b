//! Builds masked-fill and step-reordering instances from annotated
//! trajectories, applies the dataset filters and assembles the stage files.

pub mod annotate;
pub mod prompts;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{MaskedInstance, ProblemKind, ProblemRecord, ReorderInstance, TrajectoryAnnotation};
use crate::seed::rng_for;
use crate::MASK_TAG;

pub use annotate::{annotate, AnnotationClient, AnnotationTarget};
pub use prompts::{render_prompt, PromptBundle, PromptItem, PromptKind};

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("annotated formula not found in trajectory: {0}")]
    TheoremNotFound(String),
    #[error("formula `{theorem}` partially overlaps masked formula `{masked}`")]
    OverlapConflict { theorem: String, masked: String },
    #[error("trajectory of `{0}` already contains the mask tag")]
    TagInSource(String),
    #[error("{got} steps, need at least {min}")]
    TooFewSteps { got: usize, min: usize },
    #[error("{got} steps, at most {max} allowed")]
    TooManySteps { got: usize, max: usize },
    #[error("annotation for `{0}` is empty")]
    EmptyAnnotation(String),
    #[error("annotation reply is not valid JSON: {0}")]
    BadJson(String),
    #[error("annotation transport failed: {0}")]
    Transport(String),
    #[error("prompt kind does not match the item")]
    KindMismatch,
    #[error("{stage}: need {needed} instances, only {available} available")]
    InsufficientData {
        stage: String,
        needed: usize,
        available: usize,
    },
    #[error("invalid curation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub min_masks: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub stage1_train: usize,
    pub stage1_val: usize,
    pub stage2_train: usize,
    pub stage2_val: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            min_masks: 7,
            min_steps: 3,
            max_steps: 12,
            seed: 0,
            stage1_train: 20_000,
            stage1_val: 6_000,
            stage2_train: 5_000,
            stage2_val: 1_500,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        if self.min_masks < 1 {
            return Err(CurationError::Config("min_masks must be at least 1".into()));
        }
        if self.min_steps < 3 || self.min_steps > self.max_steps {
            return Err(CurationError::Config(
                "need 3 <= min_steps <= max_steps".into(),
            ));
        }
        Ok(())
    }
}

/// Replaces every occurrence of each annotated formula by the mask tag.
///
/// Formulas are processed most important first. An occurrence lying wholly
/// inside an already masked span is skipped with a warning; a partial
/// overlap is an error.
pub fn apply_masking(
    record: &ProblemRecord,
    annotation: &TrajectoryAnnotation,
) -> Result<MaskedInstance, CurationError> {
    if annotation.theorems.is_empty() {
        return Err(CurationError::EmptyAnnotation(record.id.clone()));
    }
    let text = record.flattened();
    if text.contains(MASK_TAG) {
        return Err(CurationError::TagInSource(record.id.clone()));
    }
    // (start, end, index into theorems)
    let mut spans: Vec<(usize, usize, usize)> = Vec::new();
    for (ti, theorem) in annotation.theorems.iter().enumerate() {
        if theorem.is_empty() {
            return Err(CurationError::EmptyAnnotation(record.id.clone()));
        }
        let mut found = false;
        for (start, _) in text.match_indices(theorem.as_str()) {
            found = true;
            let end = start + theorem.len();
            let mut inside = false;
            for &(s, e, owner) in &spans {
                if start >= s && end <= e {
                    inside = true;
                    break;
                }
                if start < e && s < end {
                    return Err(CurationError::OverlapConflict {
                        theorem: theorem.clone(),
                        masked: annotation.theorems[owner].clone(),
                    });
                }
            }
            if inside {
                log::warn!(
                    "{}: occurrence of `{theorem}` at byte {start} is inside a masked span; skipped",
                    record.id
                );
                continue;
            }
            spans.push((start, end, ti));
        }
        if !found {
            return Err(CurationError::TheoremNotFound(theorem.clone()));
        }
    }
    spans.sort_unstable();
    let mut masked_text = String::with_capacity(text.len());
    let mut ground_truths = Vec::with_capacity(spans.len());
    let mut last = 0;
    for &(s, e, _) in &spans {
        masked_text.push_str(&text[last..s]);
        masked_text.push_str(MASK_TAG);
        ground_truths.push(text[s..e].to_string());
        last = e;
    }
    masked_text.push_str(&text[last..]);
    Ok(MaskedInstance {
        instance_id: format!("{}:mask", record.id),
        problem_id: record.id.clone(),
        mask_count: ground_truths.len(),
        masked_text,
        ground_truths,
    })
}

/// Shuffles the annotated steps with a non-identity permutation.
pub fn split_and_shuffle(
    record: &ProblemRecord,
    annotation: &TrajectoryAnnotation,
    seed: u64,
    config: &CurationConfig,
) -> Result<ReorderInstance, CurationError> {
    let n = annotation.steps.len();
    if n < config.min_steps {
        return Err(CurationError::TooFewSteps {
            got: n,
            min: config.min_steps,
        });
    }
    if n > config.max_steps {
        return Err(CurationError::TooManySteps {
            got: n,
            max: config.max_steps,
        });
    }
    if annotation.steps.iter().any(|s| s.trim().is_empty()) {
        return Err(CurationError::EmptyAnnotation(record.id.clone()));
    }
    let mut rng = rng_for(seed, &format!("shuffle:{}", record.id));
    let identity: Vec<usize> = (0..n).collect();
    // shown[j] is the reference position of the step presented j-th
    let mut shown = identity.clone();
    while shown == identity {
        shown.shuffle(&mut rng);
    }
    let mut true_order = vec![0; n];
    for (j, &r) in shown.iter().enumerate() {
        true_order[r] = j;
    }
    let shuffled_steps = shown
        .iter()
        .enumerate()
        .map(|(j, &r)| format!("Step {j}: {}", annotation.steps[r]))
        .collect();
    Ok(ReorderInstance {
        instance_id: format!("{}:reorder", record.id),
        problem_id: record.id.clone(),
        shuffled_steps,
        true_order,
        n,
    })
}

pub fn filter_min_masks(instances: Vec<MaskedInstance>, min_masks: usize) -> Vec<MaskedInstance> {
    instances
        .into_iter()
        .filter(|i| i.mask_count >= min_masks)
        .collect()
}

/// A stage-one training item, tagged by task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StageOneItem {
    Mask(MaskedInstance),
    Reorder(ReorderInstance),
}

impl StageOneItem {
    pub fn problem_id(&self) -> &str {
        match self {
            Self::Mask(m) => &m.problem_id,
            Self::Reorder(r) => &r.problem_id,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub records: usize,
    pub masked_built: usize,
    pub masked_below_min: usize,
    pub reorder_built: usize,
    /// Failure reason → count, for both transforms.
    pub skipped: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDatasets {
    pub masked: Vec<MaskedInstance>,
    pub reorder: Vec<ReorderInstance>,
    pub stage1_train: Vec<StageOneItem>,
    pub stage1_val: Vec<StageOneItem>,
    pub stage2_train: Vec<ProblemRecord>,
    pub stage2_val: Vec<ProblemRecord>,
    pub summary: CurationSummary,
}

fn reason_key(err: &CurationError) -> &'static str {
    match err {
        CurationError::TheoremNotFound(_) => "theorem_not_found",
        CurationError::OverlapConflict { .. } => "overlap_conflict",
        CurationError::TagInSource(_) => "tag_in_source",
        CurationError::TooFewSteps { .. } => "too_few_steps",
        CurationError::TooManySteps { .. } => "too_many_steps",
        CurationError::EmptyAnnotation(_) => "empty_annotation",
        _ => "other",
    }
}

fn take<T: Clone>(pool: &[T], from: usize, count: usize) -> Vec<T> {
    pool[from..from + count].to_vec()
}

/// Builds all instances, filters them and draws the four stage splits.
///
/// Stage one is half fill, half ordering (the odd item goes to fill).
/// Stage two uses computation records that appear in stage-one training.
pub fn build_stage_datasets(
    records: &[ProblemRecord],
    annotations: &[TrajectoryAnnotation],
    config: &CurationConfig,
) -> Result<StageDatasets, CurationError> {
    config.validate()?;
    let by_id: HashMap<&str, &TrajectoryAnnotation> = annotations
        .iter()
        .map(|a| (a.problem_id.as_str(), a))
        .collect();
    let mut summary = CurationSummary {
        records: records.len(),
        ..Default::default()
    };
    let mut masked = Vec::new();
    let mut reorder = Vec::new();
    for record in records {
        let Some(ann) = by_id.get(record.id.as_str()) else {
            *summary.skipped.entry("no_annotation".into()).or_default() += 1;
            continue;
        };
        if !ann.theorems.is_empty() {
            match apply_masking(record, ann) {
                Ok(m) => masked.push(m),
                Err(e) => *summary.skipped.entry(format!("mask_{}", reason_key(&e))).or_default() += 1,
            }
        }
        if !ann.steps.is_empty() {
            match split_and_shuffle(record, ann, config.seed, config) {
                Ok(r) => reorder.push(r),
                Err(e) => {
                    *summary.skipped.entry(format!("reorder_{}", reason_key(&e))).or_default() += 1
                }
            }
        }
    }
    summary.masked_built = masked.len();
    let masked = filter_min_masks(masked, config.min_masks);
    summary.masked_below_min = summary.masked_built - masked.len();
    summary.reorder_built = reorder.len();

    let mut mask_pool = masked.clone();
    let mut reorder_pool = reorder.clone();
    mask_pool.shuffle(&mut rng_for(config.seed, "stage1:mask"));
    reorder_pool.shuffle(&mut rng_for(config.seed, "stage1:reorder"));

    let split = |total: usize| (total - total / 2, total / 2);
    let (train_m, train_r) = split(config.stage1_train);
    let (val_m, val_r) = split(config.stage1_val);
    let check = |stage: &str, needed: usize, available: usize| {
        if needed > available {
            Err(CurationError::InsufficientData {
                stage: stage.into(),
                needed,
                available,
            })
        } else {
            Ok(())
        }
    };
    check("stage1_train (mask)", train_m, mask_pool.len())?;
    check("stage1_train (reorder)", train_r, reorder_pool.len())?;
    check("stage1_val (mask)", val_m, mask_pool.len() - train_m)?;
    check("stage1_val (reorder)", val_r, reorder_pool.len() - train_r)?;

    let interleave = |ms: Vec<MaskedInstance>, rs: Vec<ReorderInstance>| {
        let mut out = Vec::with_capacity(ms.len() + rs.len());
        let mut ms = ms.into_iter();
        let mut rs = rs.into_iter();
        loop {
            match (ms.next(), rs.next()) {
                (None, None) => break,
                (m, r) => {
                    out.extend(m.map(StageOneItem::Mask));
                    out.extend(r.map(StageOneItem::Reorder));
                }
            }
        }
        out
    };
    let stage1_train = interleave(take(&mask_pool, 0, train_m), take(&reorder_pool, 0, train_r));
    let stage1_val = interleave(
        take(&mask_pool, train_m, val_m),
        take(&reorder_pool, train_r, val_r),
    );

    let train_ids: HashSet<&str> = stage1_train.iter().map(StageOneItem::problem_id).collect();
    let mut stage2_pool: Vec<ProblemRecord> = records
        .iter()
        .filter(|r| {
            r.kind == ProblemKind::Computation
                && !r.final_answer.trim().is_empty()
                && train_ids.contains(r.id.as_str())
        })
        .cloned()
        .collect();
    stage2_pool.shuffle(&mut rng_for(config.seed, "stage2"));
    check("stage2_train", config.stage2_train, stage2_pool.len())?;
    check(
        "stage2_val",
        config.stage2_val,
        stage2_pool.len() - config.stage2_train,
    )?;
    let stage2_train = take(&stage2_pool, 0, config.stage2_train);
    let stage2_val = take(&stage2_pool, config.stage2_train, config.stage2_val);

    Ok(StageDatasets {
        masked,
        reorder,
        stage1_train,
        stage1_val,
        stage2_train,
        stage2_val,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, trajectory: &[&str]) -> ProblemRecord {
        ProblemRecord {
            id: id.into(),
            statement: "s".into(),
            trajectory: trajectory.iter().map(|s| s.to_string()).collect(),
            final_answer: "1".into(),
            kind: ProblemKind::Computation,
            source_tag: String::new(),
        }
    }

    fn theorems(id: &str, t: &[&str]) -> TrajectoryAnnotation {
        TrajectoryAnnotation {
            problem_id: id.into(),
            theorems: t.iter().map(|s| s.to_string()).collect(),
            steps: vec![],
        }
    }

    #[test]
    fn masks_every_occurrence() {
        let rec = record("p", &["use A=B. then A=B again"]);
        let m = apply_masking(&rec, &theorems("p", &["A=B"])).unwrap();
        assert_eq!(m.mask_count, 2);
        assert_eq!(m.ground_truths, ["A=B", "A=B"]);
        assert_eq!(m.masked_text, format!("use {MASK_TAG}. then {MASK_TAG} again"));
        assert_eq!(m.reconstruct(), rec.flattened());
    }

    #[test]
    fn missing_theorem() {
        let rec = record("p", &["nothing here"]);
        assert!(matches!(
            apply_masking(&rec, &theorems("p", &["X=Y"])),
            Err(CurationError::TheoremNotFound(t)) if t == "X=Y"
        ));
    }

    #[test]
    fn nested_lower_priority_is_skipped() {
        let rec = record("p", &["so x+y=z holds"]);
        let m = apply_masking(&rec, &theorems("p", &["x+y=z", "y"])).unwrap();
        assert_eq!(m.mask_count, 1);
        assert_eq!(m.reconstruct(), rec.flattened());
    }

    #[test]
    fn partial_overlap_is_an_error() {
        let rec = record("p", &["abcdef"]);
        assert!(matches!(
            apply_masking(&rec, &theorems("p", &["abcd", "cdef"])),
            Err(CurationError::OverlapConflict { .. })
        ));
    }

    #[test]
    fn source_with_tag_rejected() {
        let rec = record("p", &[&format!("x {MASK_TAG} y")]);
        assert!(matches!(
            apply_masking(&rec, &theorems("p", &["x"])),
            Err(CurationError::TagInSource(_))
        ));
    }

    #[test]
    fn bitwise_case_yields_three_tags() {
        let trajectory = [
            "Step 1. Simplification. Note that A \\oplus 0xFFFFFFFF = \\sim A. Rewrite the equation as: \\[ (0x7EFEFEFF + A) \\oplus \\sim A = 0x81010100 \\]",
            "Step 2. Binary Analysis. Observe zeros at bit positions 31, 24, 16, and 8.",
            "Step 3. Deriving A. A should have 1's only where 0x7EFEFEFF has 0's: \\[ A = 0x81010100 \\]",
            "Step 4. Verification. Since there is no overlap the addition result is: \\[ 0x7EFEFEFF + 0x81010100 = 0xFFFFFFFF \\] Then verify.",
        ];
        let rec = record("bitwise", &trajectory);
        let ann = annotate::mock_annotation(&rec, AnnotationTarget::Theorems);
        let m = apply_masking(&rec, &ann).unwrap();
        assert_eq!(m.mask_count, 3);
        assert!(m.ground_truths.iter().any(|t| t == "A = 0x81010100"));
        assert_eq!(m.reconstruct(), rec.flattened());
    }

    fn steps(id: &str, n: usize) -> TrajectoryAnnotation {
        TrajectoryAnnotation {
            problem_id: id.into(),
            theorems: vec![],
            steps: (0..n).map(|i| format!("step body {i}")).collect(),
        }
    }

    #[test]
    fn shuffle_is_valid_and_deterministic() {
        let rec = record("p", &["x"]);
        let cfg = CurationConfig::default();
        let a = split_and_shuffle(&rec, &steps("p", 6), 3, &cfg).unwrap();
        let b = split_and_shuffle(&rec, &steps("p", 6), 3, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.true_order, (0..6).collect::<Vec<_>>());
        assert_eq!(a.reference_steps(), steps("p", 6).steps);
        for (j, s) in a.shuffled_steps.iter().enumerate() {
            assert!(s.starts_with(&format!("Step {j}: ")));
        }
    }

    #[test]
    fn shuffle_step_bounds() {
        let rec = record("p", &["x"]);
        let cfg = CurationConfig::default();
        assert!(matches!(
            split_and_shuffle(&rec, &steps("p", 2), 0, &cfg),
            Err(CurationError::TooFewSteps { got: 2, min: 3 })
        ));
        assert!(matches!(
            split_and_shuffle(&rec, &steps("p", 13), 0, &cfg),
            Err(CurationError::TooManySteps { got: 13, max: 12 })
        ));
    }

    fn with_count(k: usize) -> MaskedInstance {
        MaskedInstance {
            instance_id: format!("{k}:mask"),
            problem_id: k.to_string(),
            masked_text: MASK_TAG.repeat(k),
            ground_truths: vec!["x".into(); k],
            mask_count: k,
        }
    }

    #[test]
    fn min_mask_filter() {
        let kept = filter_min_masks(vec![with_count(6), with_count(7), with_count(8)], 7);
        let counts: Vec<_> = kept.iter().map(|m| m.mask_count).collect();
        assert_eq!(counts, [7, 8]);
        assert_eq!(filter_min_masks(vec![with_count(1), with_count(3)], 1).len(), 2);
        assert!(filter_min_masks(vec![], 7).is_empty());
    }

    fn corpus(n: usize) -> (Vec<ProblemRecord>, Vec<TrajectoryAnnotation>) {
        let mut recs = Vec::new();
        let mut anns = Vec::new();
        for i in 0..n {
            let id = format!("p{i}");
            let paras: Vec<String> = (0..4).map(|k| format!("para {k} with \\[f_{k}={i}\\]")).collect();
            let mut rec = ProblemRecord {
                id: id.clone(),
                statement: "s".into(),
                trajectory: paras,
                final_answer: if i % 3 == 0 { String::new() } else { i.to_string() },
                kind: if i % 3 == 0 {
                    ProblemKind::Proof
                } else {
                    ProblemKind::Computation
                },
                source_tag: String::new(),
            };
            rec.final_answer = rec.final_answer.clone();
            let mut ann = annotate::mock_annotation(&rec, AnnotationTarget::Theorems);
            ann.steps = annotate::mock_annotation(&rec, AnnotationTarget::Steps).steps;
            recs.push(rec);
            anns.push(ann);
        }
        (recs, anns)
    }

    fn small_config() -> CurationConfig {
        CurationConfig {
            min_masks: 1,
            seed: 5,
            stage1_train: 40,
            stage1_val: 10,
            stage2_train: 5,
            stage2_val: 2,
            ..Default::default()
        }
    }

    #[test]
    fn stage_datasets_balanced_and_nested() {
        let (recs, anns) = corpus(100);
        let ds = build_stage_datasets(&recs, &anns, &small_config()).unwrap();
        let masks = ds
            .stage1_train
            .iter()
            .filter(|i| matches!(i, StageOneItem::Mask(_)))
            .count();
        assert_eq!(masks, 20);
        assert_eq!(ds.stage1_train.len(), 40);
        let train_ids: HashSet<_> = ds.stage1_train.iter().map(|i| i.problem_id()).collect();
        for r in ds.stage2_train.iter().chain(&ds.stage2_val) {
            assert_eq!(r.kind, ProblemKind::Computation);
            assert!(train_ids.contains(r.id.as_str()));
        }
        let again = build_stage_datasets(&recs, &anns, &small_config()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn stage_datasets_insufficient() {
        let (recs, anns) = corpus(100);
        let cfg = CurationConfig {
            stage1_train: 20_000,
            ..small_config()
        };
        assert!(matches!(
            build_stage_datasets(&recs, &anns, &cfg),
            Err(CurationError::InsufficientData { .. })
        ));
    }
}
