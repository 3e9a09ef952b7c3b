use std::path::{Path, PathBuf};

use anyhow::Context as _;
use mrrlvr_core::curation::CurationConfig;
use mrrlvr_core::grpo::{GrpoConfig, SyntheticConfig, ToyPolicyConfig};
use mrrlvr_core::rewards::DEFAULT_EVAL_POSITIONS;
use serde::{Deserialize, Serialize};

/// The run config file: one JSON document, one section per module.
/// Every section and field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub curation: CurationConfig,
    pub rewards: RewardsSection,
    pub grpo: GrpoConfig,
    pub policy: ToyPolicyConfig,
    pub synthetic: SyntheticConfig,
    pub pipeline: PipelineSection,
    pub eval: EvalSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardsSection {
    pub eval_positions: usize,
    /// Fill similarities below this score zero.
    pub similarity_floor: f64,
}

impl Default for RewardsSection {
    fn default() -> Self {
        Self {
            eval_positions: DEFAULT_EVAL_POSITIONS,
            similarity_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub epochs: usize,
    pub batch_queries: usize,
    pub max_steps: Option<u64>,
    pub checkpoint_every: u64,
    /// Task JSONL files; synthetic tasks are generated when empty.
    pub datasets: Vec<PathBuf>,
    /// Use the language-model learning rate.
    pub paper_scale: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_queries: 8,
            max_steps: None,
            checkpoint_every: 100,
            datasets: Vec::new(),
            paper_scale: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { ks: vec![1, 5, 8] }
    }
}
