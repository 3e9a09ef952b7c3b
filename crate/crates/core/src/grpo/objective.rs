//! The group-relative clipped surrogate, its KL penalty and its gradient.

use serde::{Deserialize, Serialize};

use super::policy::PolicyInterface;
use super::{GrpoConfig, GrpoError, KlAggregation, RolloutGroup};

pub const RATIO_MIN: f64 = 1e-8;
pub const RATIO_MAX: f64 = 1e8;

/// Counters for numerical events during evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub ratio_clamps: u64,
}

/// Standardised rewards `(r - mean) / std` with the population std. A group
/// whose std is below `std_floor` carries no signal and gets zeros.
pub fn normalize_rewards(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_floor {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `pi_new / pi_old` for one token, clamped to `[1e-8, 1e8]`.
pub fn token_ratio(logp_new: f64, logp_old: f64, diag: &mut Diagnostics) -> f64 {
    let rho = (logp_new - logp_old).exp();
    if !(RATIO_MIN..=RATIO_MAX).contains(&rho) {
        diag.ratio_clamps += 1;
        return rho.clamp(RATIO_MIN, RATIO_MAX);
    }
    rho
}

pub fn clipped_term(rho: f64, adv: f64, eps: f64) -> f64 {
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps);
    (rho * adv).min(clipped * adv)
}

/// True when the min in [`clipped_term`] picks the clipped branch and the
/// ratio sits outside the band, i.e. the token contributes no gradient.
pub fn is_clipped(rho: f64, adv: f64, eps: f64) -> bool {
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps);
    clipped != rho && clipped * adv < rho * adv
}

/// Per-token `r - ln r - 1` with `r = pi_ref / pi_new`. Never negative.
pub fn kl_k3(logp_ref: f64, logp_new: f64) -> f64 {
    let log_r = logp_ref - logp_new;
    // expm1 keeps precision when r is close to 1
    (log_r.exp_m1() - log_r).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupEvaluation {
    /// Surrogate minus the KL penalty.
    pub objective: f64,
    pub surrogate: f64,
    /// Mean per-token k3 estimate.
    pub kl: f64,
    pub clip_fraction: f64,
    pub tokens: usize,
    pub clipped_tokens: usize,
    pub diagnostics: Diagnostics,
    pub gradient: Option<Vec<f64>>,
}

fn validate(group: &RolloutGroup, vocab: usize) -> Result<(), GrpoError> {
    let g = group.sequences.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    if group.old_logprobs.len() != g || group.ref_logprobs.len() != g || group.rewards.len() != g {
        return Err(GrpoError::InvalidGroup("per-sequence arrays differ in length".into()));
    }
    for (i, seq) in group.sequences.iter().enumerate() {
        if seq.is_empty() {
            return Err(GrpoError::InvalidGroup(format!("sequence {i} is empty")));
        }
        if group.old_logprobs[i].len() != seq.len() || group.ref_logprobs[i].len() != seq.len() {
            return Err(GrpoError::InvalidGroup(format!(
                "logprob length mismatch in sequence {i}"
            )));
        }
        if let Some(&tok) = seq.iter().find(|&&t| t >= vocab) {
            return Err(GrpoError::ScoreMismatch { token: tok, vocab });
        }
    }
    Ok(())
}

/// Evaluates the objective on one group, optionally with its gradient.
/// Advantages are the standardised group rewards.
pub fn evaluate_group(
    group: &RolloutGroup,
    policy: &dyn PolicyInterface,
    config: &GrpoConfig,
    with_gradient: bool,
) -> Result<GroupEvaluation, GrpoError> {
    validate(group, policy.vocab_size())?;
    let advantages = normalize_rewards(&group.rewards, config.std_floor)?;
    let g = group.sequences.len() as f64;
    let eps = config.clip_eps;
    let beta = config.kl_coef;
    let mut diag = Diagnostics::default();
    let mut surrogate = 0.0;
    let mut kl_penalty = 0.0;
    let mut kl_sum = 0.0;
    let mut tokens = 0usize;
    let mut clipped_tokens = 0usize;
    let mut grad = with_gradient.then(|| vec![0.0; policy.num_parameters()]);

    for (i, seq) in group.sequences.iter().enumerate() {
        let adv = advantages[i];
        let len = seq.len() as f64;
        let kl_weight = match config.kl_aggregation {
            KlAggregation::PerToken => 1.0 / (g * len),
            KlAggregation::SequenceSum => 1.0 / g,
        };
        for (t, &tok) in seq.iter().enumerate() {
            let prefix = &seq[..t];
            let logprobs = policy.token_logprobs(&group.prompt, prefix);
            let logp_new = logprobs[tok];
            let logp_old = group.old_logprobs[i][t];
            let logp_ref = group.ref_logprobs[i][t];

            let before = diag.ratio_clamps;
            let rho = token_ratio(logp_new, logp_old, &mut diag);
            let ratio_clamped = diag.ratio_clamps != before;
            surrogate += clipped_term(rho, adv, eps) / (g * len);
            let clipped = is_clipped(rho, adv, eps);
            if clipped {
                clipped_tokens += 1;
            }
            let k3 = kl_k3(logp_ref, logp_new);
            kl_sum += k3;
            kl_penalty += beta * k3 * kl_weight;
            tokens += 1;

            if let Some(grad) = grad.as_mut() {
                // d/dlogp of the min term: rho*A on the unclipped branch.
                let d_surr = if clipped || ratio_clamped { 0.0 } else { rho * adv };
                // d/dlogp of -beta*k3 is beta*(r - 1).
                let r = (logp_ref - logp_new).exp();
                let d_kl = beta * (r - 1.0);
                let weight = d_surr / (g * len) + d_kl * kl_weight;
                if weight != 0.0 {
                    policy.accumulate_gradient(&group.prompt, prefix, tok, weight, grad);
                }
            }
        }
    }
    Ok(GroupEvaluation {
        objective: surrogate - kl_penalty,
        surrogate,
        kl: kl_sum / tokens as f64,
        clip_fraction: clipped_tokens as f64 / tokens as f64,
        tokens,
        clipped_tokens,
        diagnostics: diag,
        gradient: grad,
    })
}

pub fn grpo_objective(
    group: &RolloutGroup,
    policy: &dyn PolicyInterface,
    config: &GrpoConfig,
) -> Result<f64, GrpoError> {
    Ok(evaluate_group(group, policy, config, false)?.objective)
}

/// Exact gradient of [`grpo_objective`] with respect to the policy
/// parameters. Tokens on the clipped branch contribute nothing.
pub fn grpo_gradient(
    group: &RolloutGroup,
    policy: &dyn PolicyInterface,
    config: &GrpoConfig,
) -> Result<Vec<f64>, GrpoError> {
    Ok(evaluate_group(group, policy, config, true)?
        .gradient
        .expect("gradient requested"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_rewards(&[1.0, 0.0, 1.0, 0.0], 1e-6).unwrap(), [1.0, -1.0, 1.0, -1.0]);
        assert_eq!(normalize_rewards(&[1.0; 4], 1e-6).unwrap(), [0.0; 4]);
        assert_eq!(normalize_rewards(&[0.9], 1e-6), Err(GrpoError::GroupTooSmall(1)));
    }

    #[test]
    fn ratio_examples() {
        let mut d = Diagnostics::default();
        assert_eq!(token_ratio(0.5f64.ln(), 0.5f64.ln(), &mut d), 1.0);
        assert!((token_ratio(0.6f64.ln(), 0.3f64.ln(), &mut d) - 2.0).abs() < 1e-12);
        assert_eq!(d.ratio_clamps, 0);
        assert_eq!(token_ratio(-1000.0, 0.0, &mut d), 1e-8);
        assert_eq!(d.ratio_clamps, 1);
        assert_eq!(token_ratio(1000.0, 0.0, &mut d), 1e8);
        assert_eq!(d.ratio_clamps, 2);
    }

    #[test]
    fn clipped_examples() {
        assert!((clipped_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert_eq!(clipped_term(1.5, -1.0, 0.2), -1.5);
        for a in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            assert_eq!(clipped_term(1.0, a, 0.2), a);
            assert_eq!(clipped_term(1.0, a, 5.0), a);
        }
        assert!(is_clipped(1.5, 1.0, 0.2));
        assert!(!is_clipped(1.5, -1.0, 0.2));
        assert!(!is_clipped(1.1, 1.0, 0.2));
    }

    #[test]
    fn k3_examples() {
        assert_eq!(kl_k3(-0.7, -0.7), 0.0);
        let ln2 = 2f64.ln();
        assert!((kl_k3(ln2, 0.0) - (2.0 - ln2 - 1.0)).abs() < 1e-12);
        assert!((kl_k3(-ln2, 0.0) - (0.5 + ln2 - 1.0)).abs() < 1e-12);
        assert!((kl_k3(ln2, 0.0) - 0.306853).abs() < 1e-6);
        assert!((kl_k3(-ln2, 0.0) - 0.193147).abs() < 1e-6);
    }
}
