//! Group-relative policy optimisation on small synthetic policies.

mod objective;
mod policy;
mod tasks;
mod trainer;

pub use objective::{
    clipped_term, evaluate_group, grpo_gradient, grpo_objective, is_clipped, kl_k3,
    normalize_rewards, token_ratio, Diagnostics, GroupEvaluation, RATIO_MAX, RATIO_MIN,
};
pub use policy::{log_softmax, FeatureSet, PolicyInterface, Token, ToyPolicy, ToyPolicyConfig};
pub use tasks::{
    SyntheticConfig, SyntheticDataset, SyntheticFillTask, SyntheticOutcomeTask,
    SyntheticReorderTask, SyntheticTask,
};
pub use trainer::{ema_update, sample_group, train_step, StepMetrics};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("a group needs at least 2 responses, got {0}")]
    GroupTooSmall(usize),
    #[error("invalid rollout group: {0}")]
    InvalidGroup(String),
    #[error("token {token} is outside the policy vocabulary of size {vocab}")]
    ScoreMismatch { token: usize, vocab: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// How the KL penalty is aggregated over tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlAggregation {
    /// Same `1/(G |o_i|)` weights as the surrogate.
    #[default]
    PerToken,
    /// Summed over each sequence, averaged over the group.
    SequenceSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub group_size: usize,
    pub learning_rate: f64,
    pub std_floor: f64,
    pub kl_aggregation: KlAggregation,
    /// Gradient steps taken on each sampled batch.
    pub updates_per_batch: usize,
    /// When set, the reference policy tracks the live one as an EMA with
    /// this decay after every step. `None` keeps it fixed.
    pub ref_ema: Option<f64>,
}

/// Learning rate used at language-model scale.
pub const PAPER_LEARNING_RATE: f64 = 1e-6;

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            kl_coef: 0.001,
            group_size: 16,
            learning_rate: 1.0,
            std_floor: 1e-6,
            kl_aggregation: KlAggregation::PerToken,
            updates_per_batch: 1,
            ref_ema: None,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::Config(m.into()));
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.kl_coef >= 0.0) {
            return bad("kl_coef must be non-negative");
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.std_floor >= 0.0) {
            return bad("std_floor must be non-negative");
        }
        if self.updates_per_batch == 0 {
            return bad("updates_per_batch must be at least 1");
        }
        if let Some(d) = self.ref_ema {
            if !(0.0..=1.0).contains(&d) {
                return bad("ref_ema must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Per-sequence advantages, shared by every token of the sequence.
pub type AdvantageVector = Vec<f64>;

/// `G` responses to one prompt with the log-probabilities recorded when
/// they were sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub query_id: String,
    pub prompt: SyntheticTask,
    pub sequences: Vec<Vec<Token>>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub ref_logprobs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}
