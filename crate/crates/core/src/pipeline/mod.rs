//! Two-stage training: process rewards first, outcome rewards second, with
//! checkpoints that resume bit-exactly.
//!
//! A run directory holds `run.json` (written once, before the first step),
//! `metrics.jsonl`, `ckpt_<step>.bin` / `ckpt_<step>.json` and, after the
//! last step, `run.done.json`.

mod checkpoint;

pub use checkpoint::{checkpoint_paths, latest_checkpoint, Checkpoint, FORMAT_VERSION};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fsutil::{to_jsonl, write_atomic};
use crate::grpo::{
    ema_update, train_step, GrpoConfig, GrpoError, PolicyInterface, SyntheticConfig,
    SyntheticDataset, SyntheticTask, ToyPolicy, ToyPolicyConfig, PAPER_LEARNING_RATE,
};
use crate::seed::{derive_seed, rng_for, sha256_hex};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dataset missing: {0}")]
    DatasetMissing(String),
    #[error("stage mismatch: {0}")]
    StageMismatch(String),
    #[error("config drift: checkpoint was written under {expected}, current config hashes to {actual}")]
    ConfigDrift { expected: String, actual: String },
    #[error("bad checkpoint {}: {reason}", path.display())]
    BadCheckpoint { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Grpo(#[from] GrpoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
        }
    }
}

/// Prompt/response token budgets of the language-model runs. Kept for the
/// record; toy tasks have their own fixed lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLengths {
    pub prompt: u32,
    pub response: u32,
}

impl TokenLengths {
    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::One => Self {
                prompt: 2048,
                response: 4096,
            },
            Stage::Two => Self {
                prompt: 1024,
                response: 4096,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    /// JSONL files of synthetic tasks. When empty, tasks are generated from
    /// `synthetic` under `seed`.
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default)]
    pub policy: ToyPolicyConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_queries: usize,
    /// Optional cap on the number of steps.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default = "default_every")]
    pub checkpoint_every: u64,
    pub checkpoint_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Stage two without a stage-one initialisation: the outcome-only
    /// baseline.
    #[serde(default)]
    pub from_scratch: bool,
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub lm_token_lengths: Option<TokenLengths>,
    /// Stop after this many completed steps, leaving a resumable
    /// checkpoint. Not part of the config identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halt_at: Option<u64>,
}

fn default_epochs() -> usize {
    3
}
fn default_batch() -> usize {
    8
}
fn default_every() -> u64 {
    100
}

/// Fields that describe where a run lives or when it stops rather than
/// what it computes.
const RUNTIME_FIELDS: &[&str] = &["checkpoint_dir", "halt_at", "init_checkpoint", "datasets"];

impl StageConfig {
    pub fn new(stage: Stage, checkpoint_dir: impl Into<PathBuf>) -> Self {
        Self {
            stage,
            datasets: Vec::new(),
            synthetic: Some(SyntheticConfig::default()),
            grpo: GrpoConfig::default(),
            policy: ToyPolicyConfig::default(),
            epochs: default_epochs(),
            batch_queries: default_batch(),
            max_steps: None,
            checkpoint_every: default_every(),
            checkpoint_dir: checkpoint_dir.into(),
            seed: 0,
            from_scratch: false,
            init_checkpoint: None,
            lm_token_lengths: Some(TokenLengths::for_stage(stage)),
            halt_at: None,
        }
    }

    /// Language-model scale learning rate instead of the toy default.
    pub fn paper_scale(mut self) -> Self {
        self.grpo.learning_rate = PAPER_LEARNING_RATE;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.grpo.validate()?;
        if self.batch_queries == 0 {
            return Err(PipelineError::Config("batch_queries must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(PipelineError::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Hash over everything that determines the metric stream, including
    /// the dataset contents.
    pub fn config_hash(&self, tasks: &TaskPools) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Value::Object(map) = &mut v {
            for k in RUNTIME_FIELDS {
                map.remove(*k);
            }
            map.insert("dataset_sha256".into(), Value::String(tasks.content_hash()));
        }
        sha256_hex(v.to_string().as_bytes())
    }
}

/// Tasks split by family.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskPools {
    pub fill: Vec<SyntheticTask>,
    pub reorder: Vec<SyntheticTask>,
    pub outcome: Vec<SyntheticTask>,
    /// Per-file content hashes, for the manifest.
    pub sources: BTreeMap<String, String>,
}

impl TaskPools {
    fn push(&mut self, t: SyntheticTask) {
        match t {
            SyntheticTask::Fill(_) => self.fill.push(t),
            SyntheticTask::Reorder(_) => self.reorder.push(t),
            SyntheticTask::Outcome(_) => self.outcome.push(t),
        }
    }

    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        for pool in [&self.fill, &self.reorder, &self.outcome] {
            bytes.extend(to_jsonl(pool).expect("tasks serialise"));
            bytes.push(0);
        }
        sha256_hex(&bytes)
    }
}

pub fn parse_tasks(text: &str) -> Result<Vec<SyntheticTask>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn load_tasks(config: &StageConfig) -> Result<TaskPools, PipelineError> {
    let mut pools = TaskPools::default();
    if config.datasets.is_empty() {
        let Some(syn) = &config.synthetic else {
            return Err(PipelineError::DatasetMissing("no dataset files and no synthetic section".into()));
        };
        let d = SyntheticDataset::generate(syn, config.seed);
        for t in d.fill.into_iter().chain(d.reorder).chain(d.outcome) {
            pools.push(t);
        }
        pools.sources.insert("synthetic".into(), pools.content_hash());
        return Ok(pools);
    }
    for path in &config.datasets {
        let bytes = std::fs::read(path)
            .map_err(|e| PipelineError::DatasetMissing(format!("{}: {e}", path.display())))?;
        let text = String::from_utf8_lossy(&bytes);
        for t in parse_tasks(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))? {
            pools.push(t);
        }
        pools.sources.insert(path.display().to_string(), sha256_hex(&bytes));
    }
    Ok(pools)
}

/// Batches for every step of the stage, in order. Each epoch visits every
/// task once in a seeded order; stage one alternates fill and ordering
/// batches.
pub fn build_schedule(config: &StageConfig, pools: &TaskPools) -> Vec<Vec<SyntheticTask>> {
    let b = config.batch_queries;
    let batches = |pool: &[SyntheticTask], label: &str, epoch: usize| -> Vec<Vec<SyntheticTask>> {
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(&mut rng_for(config.seed, &format!("epoch{epoch}:{label}")));
        idx.chunks(b).map(|c| c.iter().map(|&i| pool[i].clone()).collect()).collect()
    };
    let mut out = Vec::new();
    for epoch in 0..config.epochs {
        match config.stage {
            Stage::One => {
                let fill = batches(&pools.fill, "mask", epoch);
                let reorder = batches(&pools.reorder, "reorder", epoch);
                let (mut f, mut r) = (fill.into_iter(), reorder.into_iter());
                loop {
                    let (x, y) = (f.next(), r.next());
                    if x.is_none() && y.is_none() {
                        break;
                    }
                    out.extend(x);
                    out.extend(y);
                }
            }
            Stage::Two => out.extend(batches(&pools.outcome, "outcome", epoch)),
        }
    }
    if let Some(cap) = config.max_steps {
        out.truncate(usize::try_from(cap).unwrap_or(usize::MAX));
    }
    out
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub stage: u8,
    pub mean_reward: f64,
    pub objective: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    /// Which reward produced `mean_reward`: `mask`, `reorder` or `final`.
    pub reward_kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub stage: Stage,
    pub config: Value,
    pub config_hash: String,
    pub dataset_hashes: BTreeMap<String, String>,
    pub code_version: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    /// Seconds since the Unix epoch.
    pub start_timestamp: u64,
    /// Always null here; the end time goes to `run.done.json` so the
    /// manifest is never rewritten.
    pub end_timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCompletion {
    pub run_id: String,
    pub steps: u64,
    pub end_timestamp: u64,
    pub final_checkpoint: String,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricRecord>, PipelineError> {
    let path = dir.join("metrics.jsonl");
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::Config(format!("metrics.jsonl: {e}"))))
        .collect()
}

fn step_seed(config: &StageConfig, step: u64) -> u64 {
    derive_seed(config.seed, &format!("stage{}:step{step}", config.stage.number()))
}

/// Mutable state of a run between checkpoints.
struct RunState {
    policy: ToyPolicy,
    reference: ToyPolicy,
    step: u64,
    metrics: Vec<MetricRecord>,
}

struct Run<'a> {
    config: &'a StageConfig,
    schedule: Vec<Vec<SyntheticTask>>,
    config_hash: String,
}

impl Run<'_> {
    fn checkpoint(&self, state: &RunState) -> Checkpoint {
        Checkpoint {
            stage: self.config.stage,
            step: state.step,
            parameters: state.policy.parameters().to_vec(),
            reference: state.reference.parameters().to_vec(),
            rng_state: step_seed(self.config, state.step),
            config_hash: self.config_hash.clone(),
            policy: self.config.policy,
        }
    }

    fn persist(&self, state: &RunState) -> Result<Checkpoint, PipelineError> {
        let dir = &self.config.checkpoint_dir;
        let ckpt = self.checkpoint(state);
        ckpt.save(dir)?;
        let path = dir.join("metrics.jsonl");
        let body = to_jsonl(&state.metrics).expect("metrics serialise");
        write_atomic(&path, &body).map_err(io_err(&path))?;
        Ok(ckpt)
    }

    fn total(&self) -> u64 {
        self.schedule.len() as u64
    }

    fn drive(&self, mut state: RunState) -> Result<Checkpoint, PipelineError> {
        let cfg = self.config;
        let total = self.total();
        let mut last = None;
        while state.step < total {
            if cfg.halt_at == Some(state.step) {
                log::info!("halting at step {} of {total}", state.step);
                return self.persist(&state);
            }
            let tasks = &self.schedule[state.step as usize];
            let seed = step_seed(cfg, state.step);
            let m = train_step(&mut state.policy, &state.reference, tasks, &cfg.grpo, seed)?;
            if let Some(decay) = cfg.grpo.ref_ema {
                ema_update(&mut state.reference, &state.policy, decay);
            }
            state.step += 1;
            state.metrics.push(MetricRecord {
                step: state.step,
                stage: cfg.stage.number(),
                mean_reward: m.mean_reward,
                objective: m.objective,
                kl: m.kl,
                clip_fraction: m.clip_fraction,
                reward_kind: m.reward_kinds.join("+"),
            });
            if state.step % cfg.checkpoint_every == 0 || state.step == total {
                last = Some(self.persist(&state)?);
            }
        }
        let ckpt = match last {
            Some(c) => c,
            None => self.persist(&state)?,
        };
        let done = RunCompletion {
            run_id: self.config_hash[..16].to_string(),
            steps: state.step,
            end_timestamp: now(),
            final_checkpoint: checkpoint_paths(&cfg.checkpoint_dir, state.step).0.display().to_string(),
        };
        let path = cfg.checkpoint_dir.join("run.done.json");
        write_atomic(&path, &serde_json::to_vec_pretty(&done).expect("serialises")).map_err(io_err(&path))?;
        Ok(ckpt)
    }
}

fn prepare(config: &StageConfig) -> Result<(Run<'_>, TaskPools), PipelineError> {
    config.validate()?;
    let pools = load_tasks(config)?;
    match config.stage {
        Stage::One if pools.fill.is_empty() || pools.reorder.is_empty() => {
            return Err(PipelineError::DatasetMissing(
                "stage one needs both fill and ordering tasks".into(),
            ))
        }
        Stage::Two if pools.outcome.is_empty() => {
            return Err(PipelineError::DatasetMissing("stage two needs outcome tasks".into()))
        }
        _ => {}
    }
    let run = Run {
        config,
        schedule: build_schedule(config, &pools),
        config_hash: config.config_hash(&pools),
    };
    Ok((run, pools))
}

fn write_manifest(run: &Run<'_>, pools: &TaskPools, baseline: Option<&str>) -> Result<(), PipelineError> {
    let cfg = run.config;
    let manifest = RunManifest {
        run_id: run.config_hash[..16].to_string(),
        stage: cfg.stage,
        config: serde_json::to_value(cfg).expect("config serialises"),
        config_hash: run.config_hash.clone(),
        dataset_hashes: pools.sources.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        baseline: baseline.map(str::to_string),
        start_timestamp: now(),
        end_timestamp: None,
    };
    let path = cfg.checkpoint_dir.join("run.json");
    std::fs::create_dir_all(&cfg.checkpoint_dir).map_err(io_err(&cfg.checkpoint_dir))?;
    write_atomic(&path, &serde_json::to_vec_pretty(&manifest).expect("serialises")).map_err(io_err(&path))
}

/// Trains on fill and ordering tasks with process rewards only.
pub fn run_stage1(config: &StageConfig) -> Result<Checkpoint, PipelineError> {
    if config.stage != Stage::One {
        return Err(PipelineError::StageMismatch("run_stage1 needs a stage-one config".into()));
    }
    let (run, pools) = prepare(config)?;
    write_manifest(&run, &pools, None)?;
    let policy = ToyPolicy::new(config.policy);
    let state = RunState {
        reference: policy.clone(),
        policy,
        step: 0,
        metrics: Vec::new(),
    };
    run.drive(state)
}

/// Trains on outcome tasks with the outcome reward only, starting from a
/// stage-one checkpoint, or from scratch when `from_scratch` is set.
pub fn run_stage2(config: &StageConfig, init: Option<&Checkpoint>) -> Result<Checkpoint, PipelineError> {
    if config.stage != Stage::Two {
        return Err(PipelineError::StageMismatch("run_stage2 needs a stage-two config".into()));
    }
    let policy = match (config.from_scratch, init) {
        (true, _) => ToyPolicy::new(config.policy),
        (false, None) => {
            return Err(PipelineError::StageMismatch(
                "stage two needs a stage-one checkpoint unless from_scratch is set".into(),
            ))
        }
        (false, Some(c)) if c.stage != Stage::One => {
            return Err(PipelineError::StageMismatch(format!(
                "initial checkpoint is from stage {}, expected stage 1",
                c.stage.number()
            )))
        }
        (false, Some(c)) => {
            if c.policy != config.policy {
                return Err(PipelineError::StageMismatch("policy shape differs from the checkpoint".into()));
            }
            ToyPolicy::with_parameters(config.policy, c.parameters.clone())
                .ok_or_else(|| PipelineError::StageMismatch("parameter count differs".into()))?
        }
    };
    let (run, pools) = prepare(config)?;
    let baseline = config.from_scratch.then_some("outcome-only");
    write_manifest(&run, &pools, baseline)?;
    let state = RunState {
        reference: policy.clone(),
        policy,
        step: 0,
        metrics: Vec::new(),
    };
    run.drive(state)
}

/// Continues a run from `checkpoint` under the same configuration. A run
/// that already finished is left as it is.
pub fn resume(checkpoint: &Checkpoint, config: &StageConfig) -> Result<Checkpoint, PipelineError> {
    let (run, _) = prepare(config)?;
    if checkpoint.config_hash != run.config_hash {
        return Err(PipelineError::ConfigDrift {
            expected: checkpoint.config_hash.clone(),
            actual: run.config_hash.clone(),
        });
    }
    if checkpoint.step >= run.total() {
        log::info!("run already finished at step {}; nothing to do", checkpoint.step);
        return Ok(checkpoint.clone());
    }
    let policy = ToyPolicy::with_parameters(config.policy, checkpoint.parameters.clone())
        .ok_or_else(|| PipelineError::BadCheckpoint {
            path: config.checkpoint_dir.clone(),
            reason: "parameter count differs from the policy shape".into(),
        })?;
    let reference = ToyPolicy::with_parameters(config.policy, checkpoint.reference.clone())
        .expect("same shape as parameters");
    let mut metrics = read_metrics(&config.checkpoint_dir)?;
    metrics.retain(|m| m.step <= checkpoint.step);
    if metrics.len() as u64 != checkpoint.step {
        return Err(PipelineError::BadCheckpoint {
            path: config.checkpoint_dir.join("metrics.jsonl"),
            reason: format!("{} metric records for step {}", metrics.len(), checkpoint.step),
        });
    }
    let state = RunState {
        policy,
        reference,
        step: checkpoint.step,
        metrics,
    };
    run.drive(state)
}

/// First step whose trailing `window`-step mean reward reaches `threshold`.
pub fn steps_to_threshold(metrics: &[MetricRecord], window: usize, threshold: f64) -> Option<u64> {
    if window == 0 {
        return None;
    }
    metrics.windows(window).find_map(|w| {
        let mean = w.iter().map(|m| m.mean_reward).sum::<f64>() / window as f64;
        (mean >= threshold).then(|| w[window - 1].step)
    })
}
