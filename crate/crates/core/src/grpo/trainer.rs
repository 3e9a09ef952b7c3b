use rand::Rng;
use serde::{Deserialize, Serialize};

use super::objective::{evaluate_group, GroupEvaluation};
use super::policy::{PolicyInterface, Token, ToyPolicy};
use super::tasks::SyntheticTask;
use super::{GrpoConfig, GrpoError, RolloutGroup};
use crate::seed::{derive_seed, rng_for};

/// Samples `g` responses autoregressively at temperature 1, recording the
/// sampling log-probabilities and the reference log-probabilities.
pub fn sample_group(
    policy: &dyn PolicyInterface,
    reference: &dyn PolicyInterface,
    task: &SyntheticTask,
    g: usize,
    seed: u64,
) -> RolloutGroup {
    let mut rng = rng_for(seed, task.id());
    let box_token = policy.vocab_size() - 1;
    let len = task.response_len();
    let mut group = RolloutGroup {
        query_id: task.id().to_string(),
        prompt: task.clone(),
        sequences: Vec::with_capacity(g),
        old_logprobs: Vec::with_capacity(g),
        ref_logprobs: Vec::with_capacity(g),
        rewards: Vec::with_capacity(g),
    };
    for _ in 0..g {
        let mut seq: Vec<Token> = Vec::with_capacity(len);
        let mut old = Vec::with_capacity(len);
        let mut refp = Vec::with_capacity(len);
        for _ in 0..len {
            let lp = policy.token_logprobs(task, &seq);
            let tok = categorical(&lp, rng.gen::<f64>());
            refp.push(reference.token_logprobs(task, &seq)[tok]);
            old.push(lp[tok]);
            seq.push(tok);
        }
        group.rewards.push(task.score(&seq, box_token).value);
        group.sequences.push(seq);
        group.old_logprobs.push(old);
        group.ref_logprobs.push(refp);
    }
    group
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
fn categorical(logprobs: &[f64], u: f64) -> Token {
    let mut acc = 0.0;
    for (i, lp) in logprobs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum
    logprobs
        .iter()
        .rposition(|lp| lp.is_finite())
        .unwrap_or(logprobs.len() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub mean_reward: f64,
    pub objective: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    /// Reward provenance of every group in the batch, deduplicated.
    pub reward_kinds: Vec<String>,
    pub ratio_clamps: u64,
}

#[cfg(feature = "parallel")]
fn map_ordered<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ordered<T, U>(items: &[T], f: impl Fn(usize, &T) -> U) -> Vec<U> {
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// One GRPO step: a group per task, then `updates_per_batch` ascent steps
/// on the batch-mean objective. Objective and KL are reported before the
/// first update; the clip fraction is averaged over all updates.
pub fn train_step(
    policy: &mut ToyPolicy,
    reference: &ToyPolicy,
    tasks: &[SyntheticTask],
    config: &GrpoConfig,
    seed: u64,
) -> Result<StepMetrics, GrpoError> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(GrpoError::InvalidGroup("empty batch".into()));
    }
    let old = policy.clone();
    let groups = map_ordered(tasks, |i, task| {
        sample_group(&old, reference, task, config.group_size, derive_seed(seed, &format!("group:{i}")))
    });
    let samples: usize = groups.iter().map(|g| g.rewards.len()).sum();
    let mean_reward = groups.iter().flat_map(|g| &g.rewards).sum::<f64>() / samples as f64;
    let mut reward_kinds: Vec<String> = tasks.iter().map(|t| t.reward_kind().to_string()).collect();
    reward_kinds.sort();
    reward_kinds.dedup();

    let b = groups.len() as f64;
    let mut objective = 0.0;
    let mut kl = 0.0;
    let mut clip_fraction = 0.0;
    let mut ratio_clamps = 0;
    for pass in 0..config.updates_per_batch {
        let snapshot: &ToyPolicy = policy;
        let evals = map_ordered(&groups, |_, g| evaluate_group(g, snapshot, config, true));
        let evals: Vec<GroupEvaluation> = evals.into_iter().collect::<Result<_, _>>()?;
        // fixed reduction order keeps runs bit-reproducible
        let mut grad = vec![0.0; policy.num_parameters()];
        for e in &evals {
            for (acc, g) in grad.iter_mut().zip(e.gradient.as_ref().expect("gradient requested")) {
                *acc += g / b;
            }
        }
        if pass == 0 {
            objective = evals.iter().map(|e| e.objective).sum::<f64>() / b;
            kl = evals.iter().map(|e| e.kl).sum::<f64>() / b;
        }
        clip_fraction += evals.iter().map(|e| e.clip_fraction).sum::<f64>() / b;
        ratio_clamps += evals.iter().map(|e| e.diagnostics.ratio_clamps).sum::<u64>();
        let lr = config.learning_rate;
        for (w, g) in policy.parameters_mut().iter_mut().zip(&grad) {
            *w += lr * g;
        }
    }
    Ok(StepMetrics {
        mean_reward,
        objective,
        kl,
        clip_fraction: clip_fraction / config.updates_per_batch as f64,
        reward_kinds,
        ratio_clamps,
    })
}

/// `reference <- decay * reference + (1 - decay) * policy`.
pub fn ema_update(reference: &mut ToyPolicy, policy: &ToyPolicy, decay: f64) {
    for (r, p) in reference.parameters_mut().iter_mut().zip(policy.parameters()) {
        *r = decay * *r + (1.0 - decay) * p;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grpo::{SyntheticConfig, SyntheticDataset, ToyPolicyConfig};

    #[test]
    fn sampling_is_deterministic() {
        let p = ToyPolicy::new(ToyPolicyConfig::default());
        let d = SyntheticDataset::generate(&SyntheticConfig::default(), 1);
        let a = sample_group(&p, &p, &d.reorder[0], 16, 9);
        let b = sample_group(&p, &p, &d.reorder[0], 16, 9);
        assert_eq!(a, b);
        assert!(a.old_logprobs.iter().flatten().all(|l| l.is_finite() && *l <= 0.0));
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut p = ToyPolicy::new(ToyPolicyConfig::default());
        let r = p.clone();
        let d = SyntheticDataset::generate(&SyntheticConfig::default(), 1);
        let cfg = GrpoConfig {
            learning_rate: 0.0,
            ..GrpoConfig::default()
        };
        let m = train_step(&mut p, &r, &d.fill[..4], &cfg, 0).unwrap();
        assert_eq!(p, r);
        assert!((0.0..=1.0).contains(&m.mean_reward));
        assert_eq!(m.clip_fraction, 0.0);
        assert_eq!(m.reward_kinds, ["mask"]);
    }

    #[test]
    fn categorical_edges() {
        let lp = [0.5f64.ln(), 0.5f64.ln()];
        assert_eq!(categorical(&lp, 0.0), 0);
        assert_eq!(categorical(&lp, 0.49), 0);
        assert_eq!(categorical(&lp, 0.51), 1);
        assert_eq!(categorical(&lp, 0.999_999_999_999), 1);
    }
}
