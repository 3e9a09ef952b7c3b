//! Answer parsers and the reward functions: masked-fill, step ordering,
//! their process-level dispatch, and the binary outcome reward.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{is_permutation, MaskedInstance, ReorderInstance};
use crate::mathtext::{extract_boxed, math_equivalent, MathTextError};
use crate::seed::rng_for;

/// Default number of masked positions scored per instance.
pub const DEFAULT_EVAL_POSITIONS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessTaskKind {
    Mask,
    Reorder,
}

impl ProcessTaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mask => "mask",
            Self::Reorder => "reorder",
        }
    }
}

/// Why a response could not be parsed. Every variant scores zero.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Malformed {
    #[error("no \\boxed{{}} answer")]
    NoBoxed,
    #[error("unbalanced braces")]
    Unbalanced,
    #[error("expected {expected} entries, got {got}")]
    WrongCount { got: usize, expected: usize },
    #[error("`{token}` is not an integer")]
    NotInteger { token: String },
    #[error("step {value} listed twice")]
    Duplicate { value: i64 },
    #[error("step {value} out of range")]
    OutOfRange { value: i64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("orders have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("response kind does not match the instance kind")]
    KindMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskFillResponse {
    pub fills: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorderResponse {
    pub order: Vec<usize>,
}

/// Per-component detail attached to a reward.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub positions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malformed: Option<Malformed>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardValue {
    pub value: f64,
    pub breakdown: RewardBreakdown,
}

impl RewardValue {
    fn malformed(kind: &str, why: Malformed) -> Self {
        Self {
            value: 0.0,
            breakdown: RewardBreakdown {
                kind: kind.into(),
                malformed: Some(why),
                ..Default::default()
            },
        }
    }
}

fn last_box(raw: &str) -> Result<String, Malformed> {
    match extract_boxed(raw) {
        Ok(mut groups) => groups.pop().ok_or(Malformed::NoBoxed),
        Err(MathTextError::UnbalancedBraces(_)) => Err(Malformed::Unbalanced),
    }
}

/// Splits on `sep` outside of braces (plain or escaped).
fn split_top_level(payload: &str, sep: char) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut current = String::new();
    let mut chars = payload.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                current.push(c);
                if let Some(next) = chars.next() {
                    // literal set braces group like ordinary ones
                    match next {
                        '{' => depth += 1,
                        '}' => depth -= 1,
                        _ => {}
                    }
                    current.push(next);
                }
                continue;
            }
            '{' => depth += 1,
            '}' => depth -= 1,
            _ if c == sep && depth == 0 => {
                parts.push(current.trim().to_string());
                current.clear();
                continue;
            }
            _ => {}
        }
        current.push(c);
    }
    parts.push(current.trim().to_string());
    parts
}

/// Reads `\boxed{f_1; f_2; ...}` from the last box in `raw`.
pub fn parse_mask_response(raw: &str, expected: usize) -> Result<MaskFillResponse, Malformed> {
    let payload = last_box(raw)?;
    let fills = split_top_level(&payload, ';');
    if fills.len() != expected {
        return Err(Malformed::WrongCount {
            got: fills.len(),
            expected,
        });
    }
    Ok(MaskFillResponse { fills })
}

/// Reads `\boxed{i_1, i_2, ...}`. Answers numbered from 1 are shifted to 0
/// when they cover exactly `1..=n`.
pub fn parse_reorder_response(raw: &str, n: usize) -> Result<ReorderResponse, Malformed> {
    let payload = last_box(raw)?;
    let tokens = split_top_level(&payload, ',');
    let mut values = Vec::with_capacity(tokens.len());
    for token in tokens {
        let value: i64 = token
            .parse()
            .map_err(|_| Malformed::NotInteger { token: token.clone() })?;
        values.push(value);
    }
    if values.len() != n {
        return Err(Malformed::WrongCount {
            got: values.len(),
            expected: n,
        });
    }
    let min = values.iter().copied().min().unwrap_or(0);
    let max = values.iter().copied().max().unwrap_or(0);
    let shift = i64::from(min == 1 && max == n as i64);
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for value in values {
        let v = value - shift;
        if v < 0 || v >= n as i64 {
            return Err(Malformed::OutOfRange { value });
        }
        let v = v as usize;
        if seen[v] {
            return Err(Malformed::Duplicate { value });
        }
        seen[v] = true;
        order.push(v);
    }
    Ok(ReorderResponse { order })
}

/// Formats fills in the masked-fill answer grammar.
pub fn render_mask_answer(fills: &[String]) -> String {
    format!("\\boxed{{{}}}", fills.join("; "))
}

/// Formats an order in the reordering answer grammar.
pub fn render_reorder_answer(order: &[usize]) -> String {
    let items: Vec<String> = order.iter().map(|i| i.to_string()).collect();
    format!("\\boxed{{{}}}", items.join(", "))
}

/// `min(h, mask_count)` distinct sorted positions drawn under `seed`.
pub fn select_eval_positions(mask_count: usize, h: usize, seed: u64) -> Vec<usize> {
    let h = h.min(mask_count);
    if h == mask_count {
        return (0..mask_count).collect();
    }
    let mut rng = rng_for(seed, "eval_positions");
    let mut picked = sample(&mut rng, mask_count, h).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskScoring {
    /// Similarities below this floor score zero. 0 keeps the graded fallback.
    pub similarity_floor: f64,
}

impl Default for MaskScoring {
    fn default() -> Self {
        Self {
            similarity_floor: 0.0,
        }
    }
}

fn match_score(fill: &str, truth: &str, scoring: MaskScoring) -> f64 {
    let verdict = math_equivalent(fill, truth);
    if verdict.equivalent {
        1.0
    } else if verdict.similarity >= scoring.similarity_floor {
        verdict.similarity
    } else {
        0.0
    }
}

/// Mean match score over the selected positions.
pub fn mask_reward(
    fills: &MaskFillResponse,
    truths: &[String],
    positions: &[usize],
    scoring: MaskScoring,
) -> RewardValue {
    let scores: Vec<f64> = positions
        .iter()
        .map(|&k| match (fills.fills.get(k), truths.get(k)) {
            (Some(f), Some(t)) => match_score(f, t, scoring),
            _ => 0.0,
        })
        .collect();
    let value = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    RewardValue {
        value: value.clamp(0.0, 1.0),
        breakdown: RewardBreakdown {
            kind: "mask".into(),
            positions: positions.to_vec(),
            scores,
            malformed: None,
        },
    }
}

/// Fraction of steps whose position differs between the two orders.
///
/// Both orders list step ids by position, so step `k` sits at the index
/// where it appears; counting misplaced steps equals counting indices where
/// the orders disagree.
pub fn position_distance(pred: &ReorderResponse, true_order: &[usize]) -> Result<f64, RewardError> {
    let n = true_order.len();
    if pred.order.len() != n {
        return Err(RewardError::LengthMismatch(pred.order.len(), n));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut pos_pred = vec![usize::MAX; n];
    let mut pos_true = vec![usize::MAX; n];
    for (i, &k) in pred.order.iter().enumerate() {
        if k < n {
            pos_pred[k] = i;
        }
    }
    for (i, &k) in true_order.iter().enumerate() {
        if k < n {
            pos_true[k] = i;
        }
    }
    let misplaced = (0..n).filter(|&k| pos_pred[k] != pos_true[k]).count();
    Ok(misplaced as f64 / n as f64)
}

pub fn order_reward(pred: &ReorderResponse, true_order: &[usize]) -> Result<RewardValue, RewardError> {
    let d = position_distance(pred, true_order)?;
    Ok(RewardValue {
        value: 1.0 - d,
        breakdown: RewardBreakdown {
            kind: "reorder".into(),
            scores: vec![d],
            ..Default::default()
        },
    })
}

#[derive(Debug, Clone, Copy)]
pub enum ProcessInstance<'a> {
    Mask(&'a MaskedInstance),
    Reorder(&'a ReorderInstance),
}

impl ProcessInstance<'_> {
    pub fn kind(&self) -> ProcessTaskKind {
        match self {
            Self::Mask(_) => ProcessTaskKind::Mask,
            Self::Reorder(_) => ProcessTaskKind::Reorder,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessRewardConfig {
    pub eval_positions: usize,
    pub seed: u64,
    pub scoring: MaskScoring,
}

impl Default for ProcessRewardConfig {
    fn default() -> Self {
        Self {
            eval_positions: DEFAULT_EVAL_POSITIONS,
            seed: 0,
            scoring: MaskScoring::default(),
        }
    }
}

/// Scores a raw response with exactly one of the fill or ordering rewards.
pub fn process_reward(
    kind: ProcessTaskKind,
    instance: ProcessInstance<'_>,
    response: &str,
    config: &ProcessRewardConfig,
) -> Result<RewardValue, RewardError> {
    if kind != instance.kind() {
        return Err(RewardError::KindMismatch);
    }
    match instance {
        ProcessInstance::Mask(inst) => {
            match parse_mask_response(response, inst.ground_truths.len()) {
                Ok(fills) => {
                    let positions =
                        select_eval_positions(inst.mask_count, config.eval_positions, config.seed);
                    Ok(mask_reward(&fills, &inst.ground_truths, &positions, config.scoring))
                }
                Err(why) => Ok(RewardValue::malformed("mask", why)),
            }
        }
        ProcessInstance::Reorder(inst) => match parse_reorder_response(response, inst.n) {
            Ok(order) => order_reward(&order, &inst.true_order),
            Err(why) => Ok(RewardValue::malformed("reorder", why)),
        },
    }
}

/// 1 when the last boxed answer verifies against `y_star`, else 0.
pub fn final_reward(y_star: &str, response_text: &str) -> RewardValue {
    match last_box(response_text) {
        Ok(answer) => {
            let ok = math_equivalent(y_star, &answer).equivalent;
            RewardValue {
                value: if ok { 1.0 } else { 0.0 },
                breakdown: RewardBreakdown {
                    kind: "final".into(),
                    ..Default::default()
                },
            }
        }
        Err(why) => RewardValue::malformed("final", why),
    }
}

/// Whether `order` is a bijection on `0..n`.
pub fn is_valid_order(order: &[usize], n: usize) -> bool {
    is_permutation(order, n)
}
