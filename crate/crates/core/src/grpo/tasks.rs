//! Synthetic tasks: small prompts whose responses are rendered to text and
//! scored by the same reward functions used on real trajectories.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::Token;
use crate::corpus::{MaskedInstance, ReorderInstance};
use crate::rewards::{
    final_reward, process_reward, MaskScoring, ProcessInstance, ProcessRewardConfig,
    ProcessTaskKind, RewardValue,
};
use crate::seed::rng_for;
use crate::MASK_TAG;

/// Shuffled step indices: `shown[j]` is the reference position of the step
/// presented at slot `j`. The policy must emit the slots in reference order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticReorderTask {
    pub id: String,
    pub shown: Vec<usize>,
}

/// Equations `a + b = <mask>` over the integers modulo `modulus`; the policy
/// emits one digit per mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticFillTask {
    pub id: String,
    pub modulus: usize,
    pub equations: Vec<(usize, usize)>,
}

/// Free response; the digits after the last box marker are the answer to
/// `(a + b) mod modulus`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticOutcomeTask {
    pub id: String,
    pub modulus: usize,
    pub a: usize,
    pub b: usize,
    pub response_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum SyntheticTask {
    Reorder(SyntheticReorderTask),
    Fill(SyntheticFillTask),
    Outcome(SyntheticOutcomeTask),
}

impl SyntheticTask {
    pub fn id(&self) -> &str {
        match self {
            Self::Reorder(t) => &t.id,
            Self::Fill(t) => &t.id,
            Self::Outcome(t) => &t.id,
        }
    }

    /// Index of the task family, used by the policy encoder.
    pub fn tag(&self) -> usize {
        match self {
            Self::Reorder(_) => 0,
            Self::Fill(_) => 1,
            Self::Outcome(_) => 2,
        }
    }

    pub fn response_len(&self) -> usize {
        match self {
            Self::Reorder(t) => t.shown.len(),
            Self::Fill(t) => t.equations.len(),
            Self::Outcome(t) => t.response_len,
        }
    }

    /// Provenance label of the reward this task produces.
    pub fn reward_kind(&self) -> &'static str {
        match self {
            Self::Reorder(_) => "reorder",
            Self::Fill(_) => "mask",
            Self::Outcome(_) => "final",
        }
    }

    pub fn is_process(&self) -> bool {
        !matches!(self, Self::Outcome(_))
    }

    /// The response as the text a language model would have produced.
    pub fn render(&self, response: &[Token], box_token: Token) -> String {
        let sym = |t: Token| {
            if t == box_token {
                "?".to_string()
            } else {
                t.to_string()
            }
        };
        match self {
            Self::Reorder(_) => {
                let items: Vec<String> = response.iter().map(|&t| sym(t)).collect();
                format!("\\boxed{{{}}}", items.join(", "))
            }
            Self::Fill(_) => {
                let items: Vec<String> = response.iter().map(|&t| sym(t)).collect();
                format!("\\boxed{{{}}}", items.join("; "))
            }
            Self::Outcome(_) => render_free(response, box_token),
        }
    }

    /// Reward of `response` with its provenance in the breakdown.
    pub fn score(&self, response: &[Token], box_token: Token) -> RewardValue {
        let text = self.render(response, box_token);
        let exact = ProcessRewardConfig {
            scoring: MaskScoring {
                similarity_floor: 1.0,
            },
            ..ProcessRewardConfig::default()
        };
        match self {
            Self::Reorder(t) => {
                let inst = t.instance();
                process_reward(ProcessTaskKind::Reorder, ProcessInstance::Reorder(&inst), &text, &exact)
                    .expect("kinds match")
            }
            Self::Fill(t) => {
                let inst = t.instance();
                process_reward(ProcessTaskKind::Mask, ProcessInstance::Mask(&inst), &text, &exact)
                    .expect("kinds match")
            }
            Self::Outcome(t) => final_reward(&((t.a + t.b) % t.modulus).to_string(), &text),
        }
    }
}

/// Digits are written out; a box marker opens `\boxed{...}` around the digit
/// run that follows it.
fn render_free(response: &[Token], box_token: Token) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < response.len() {
        if response[i] == box_token {
            let mut j = i + 1;
            let mut payload = String::new();
            while j < response.len() && response[j] != box_token {
                payload.push_str(&response[j].to_string());
                j += 1;
            }
            out.push_str(&format!(" \\boxed{{{payload}}}"));
            i = j;
        } else {
            out.push_str(&format!(" {}", response[i]));
            i += 1;
        }
    }
    out.trim_start().to_string()
}

impl SyntheticReorderTask {
    pub fn instance(&self) -> ReorderInstance {
        let n = self.shown.len();
        let mut true_order = vec![0; n];
        for (j, &r) in self.shown.iter().enumerate() {
            if r < n {
                true_order[r] = j;
            }
        }
        ReorderInstance {
            instance_id: self.id.clone(),
            problem_id: self.id.clone(),
            shuffled_steps: self.shown.iter().enumerate().map(|(j, r)| format!("Step {j}: s{r}")).collect(),
            true_order,
            n,
        }
    }
}

impl SyntheticFillTask {
    pub fn instance(&self) -> MaskedInstance {
        let text: Vec<String> = self
            .equations
            .iter()
            .map(|(a, b)| format!("{a}+{b}={MASK_TAG}"))
            .collect();
        MaskedInstance {
            instance_id: self.id.clone(),
            problem_id: self.id.clone(),
            masked_text: text.join("\n"),
            ground_truths: self
                .equations
                .iter()
                .map(|(a, b)| ((a + b) % self.modulus).to_string())
                .collect(),
            mask_count: self.equations.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub modulus: usize,
    pub reorder_steps: usize,
    pub fill_slots: usize,
    pub outcome_len: usize,
    pub per_kind: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            modulus: 5,
            reorder_steps: 4,
            fill_slots: 2,
            outcome_len: 3,
            per_kind: 256,
        }
    }
}

/// Stage-one (fill + ordering) and stage-two (outcome) task pools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub fill: Vec<SyntheticTask>,
    pub reorder: Vec<SyntheticTask>,
    pub outcome: Vec<SyntheticTask>,
}

impl SyntheticDataset {
    pub fn generate(config: &SyntheticConfig, seed: u64) -> Self {
        let m = config.modulus;
        let mut rng = rng_for(seed, "synthetic:reorder");
        let reorder = (0..config.per_kind)
            .map(|i| {
                let mut shown: Vec<usize> = (0..config.reorder_steps).collect();
                while config.reorder_steps > 1 && shown.iter().enumerate().all(|(j, &v)| j == v) {
                    shown.shuffle(&mut rng);
                }
                SyntheticTask::Reorder(SyntheticReorderTask {
                    id: format!("reorder-{i}"),
                    shown,
                })
            })
            .collect();
        let mut rng = rng_for(seed, "synthetic:fill");
        let fill = (0..config.per_kind)
            .map(|i| {
                SyntheticTask::Fill(SyntheticFillTask {
                    id: format!("fill-{i}"),
                    modulus: m,
                    equations: (0..config.fill_slots)
                        .map(|_| (rng.gen_range(0..m), rng.gen_range(0..m)))
                        .collect(),
                })
            })
            .collect();
        let mut rng = rng_for(seed, "synthetic:outcome");
        let outcome = (0..config.per_kind)
            .map(|i| {
                SyntheticTask::Outcome(SyntheticOutcomeTask {
                    id: format!("outcome-{i}"),
                    modulus: m,
                    a: rng.gen_range(0..m),
                    b: rng.gen_range(0..m),
                    response_len: config.outcome_len,
                })
            })
            .collect();
        Self {
            fill,
            reorder,
            outcome,
        }
    }
}
