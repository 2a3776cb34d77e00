//! Advantages, importance ratios, clipped surrogates, KL penalty, and
//! gradient assembly for every algorithm variant.
//!
//! Likelihoods are evaluated at the contexts frozen into each trajectory at
//! rollout time, so retrieved tokens contribute nothing anywhere: they are
//! never loss targets and never re-enter through context rebuilding.

use crate::policy::{GradAccum, PolicyParams, PolicySnapshot};
use crate::types::{Group, Trajectory};
use thiserror::Error;

/// The four objective variants under study. They differ along two axes:
/// whether the importance ratio is per token or per sequence, and whether
/// homogeneous-outcome groups are filtered out during buffer filling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmVariant {
    /// Token-level ratios, no outcome filter.
    TokenLevelGrpo,
    /// Token-level ratios with the dynamic outcome filter.
    TokenLevelFiltered,
    /// Sequence-level ratios, no outcome filter.
    SequenceLevelUnfiltered,
    /// Sequence-level ratios with the dynamic outcome filter.
    Dspo,
}

impl AlgorithmVariant {
    pub const ALL: [AlgorithmVariant; 4] = [
        AlgorithmVariant::TokenLevelGrpo,
        AlgorithmVariant::TokenLevelFiltered,
        AlgorithmVariant::SequenceLevelUnfiltered,
        AlgorithmVariant::Dspo,
    ];

    pub fn uses_filter(self) -> bool {
        matches!(
            self,
            AlgorithmVariant::TokenLevelFiltered | AlgorithmVariant::Dspo
        )
    }

    pub fn sequence_level(self) -> bool {
        matches!(
            self,
            AlgorithmVariant::SequenceLevelUnfiltered | AlgorithmVariant::Dspo
        )
    }

    /// The sequence ratio concentrates near 1 under length normalization, so
    /// sequence-level variants get a narrower clip band. 0.05 permits a
    /// mean per-token log drift of about 0.05 before the trust region
    /// freezes a trajectory; much tighter bands shut off every inner epoch
    /// after the first, much wider ones erase the distinction from
    /// token-level clipping.
    pub fn default_clip_epsilon(self) -> f64 {
        if self.sequence_level() {
            0.05
        } else {
            0.2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmVariant::TokenLevelGrpo => "token_grpo",
            AlgorithmVariant::TokenLevelFiltered => "token_filtered",
            AlgorithmVariant::SequenceLevelUnfiltered => "seq_unfiltered",
            AlgorithmVariant::Dspo => "dspo",
        }
    }

    pub fn parse(s: &str) -> Option<AlgorithmVariant> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// How the group reward standard deviation is computed. Population
/// (divide-by-G) is the only mode: it matches the group-statistics reading
/// of the normalization and avoids the G-1 blow-up at G = 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdMode {
    #[default]
    Population,
}

#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    /// Clip half-width epsilon in (0, 1).
    pub clip_epsilon: f64,
    /// KL penalty weight beta; 0 disables the penalty and is the default for
    /// every variant.
    pub kl_beta: f64,
    /// Stability constant delta added to the group reward std.
    pub advantage_delta: f64,
    pub std_mode: StdMode,
}

impl ObjectiveConfig {
    pub fn for_variant(variant: AlgorithmVariant) -> ObjectiveConfig {
        ObjectiveConfig {
            clip_epsilon: variant.default_clip_epsilon(),
            kl_beta: 0.0,
            advantage_delta: 1e-8,
            std_mode: StdMode::Population,
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(ObjectiveError::BadConfig("clip_epsilon must be in (0, 1)"));
        }
        if self.kl_beta < 0.0 {
            return Err(ObjectiveError::BadConfig("kl_beta must be non-negative"));
        }
        if self.advantage_delta <= 0.0 {
            return Err(ObjectiveError::BadConfig("advantage_delta must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("objective produced a non-finite value")]
    NonFiniteLoss,
    #[error("advantages not computed for the group")]
    AdvantagesMissing,
    #[error("invalid objective config: {0}")]
    BadConfig(&'static str),
}

/// Group-normalized advantages: `(R_i - mean(R)) / (std(R) + delta)` with the
/// population standard deviation. Every token of trajectory i later shares
/// the value.
pub fn group_advantages(rewards: &[u8], delta: f64) -> Vec<f64> {
    assert!(rewards.len() >= 2, "advantage needs a group of at least 2");
    assert!(delta > 0.0);
    let n = rewards.len() as f64;
    let mean = rewards.iter().map(|&r| f64::from(r)).sum::<f64>() / n;
    let var = rewards
        .iter()
        .map(|&r| {
            let d = f64::from(r) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let denom = var.sqrt() + delta;
    rewards
        .iter()
        .map(|&r| (f64::from(r) - mean) / denom)
        .collect()
}

/// Per-agent-token importance ratios `exp(new_lp - old_lp)` under the live
/// parameters. Retrieved tokens have no entry.
pub fn token_ratios(trajectory: &Trajectory, live: &PolicyParams) -> Vec<f64> {
    trajectory
        .agent_steps()
        .map(|step| {
            let new_lp = live.log_probs(step.features)[step.token.0 as usize];
            (new_lp - step.old_log_prob).exp()
        })
        .collect()
}

/// Sequence-level importance ratio: the geometric mean of the token ratios,
/// computed as `exp(mean of log ratios)` over the agent tokens.
pub fn sequence_ratio(trajectory: &Trajectory, live: &PolicyParams) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for step in trajectory.agent_steps() {
        let new_lp = live.log_probs(step.features)[step.token.0 as usize];
        sum += new_lp - step.old_log_prob;
        count += 1;
    }
    (sum / count as f64).exp()
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Exact `KL(pi_live(.|ctx) || pi_ref(.|ctx))` over the full vocabulary at
/// each agent-token context, averaged over the agent tokens.
pub fn kl_penalty(trajectory: &Trajectory, live: &PolicyParams, reference: &PolicySnapshot) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for step in trajectory.agent_steps() {
        let lp = live.log_probs(step.features);
        let lq = reference.log_probs(step.features);
        total += lp
            .iter()
            .zip(&lq)
            .map(|(p, q)| p.exp() * (p - q))
            .sum::<f64>();
        count += 1;
    }
    total / count as f64
}

/// Which unclipped ratio weighting scales a trajectory's log-prob gradients:
/// a per-token factor or one holistic sequence factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioWeighting {
    TokenLevel,
    SequenceLevel,
}

/// Objective value and weight-space gradient for one group.
///
/// The objective averages trajectories (1/G); token-level variants average
/// the clipped per-token terms within each trajectory (1/|y_i|), while
/// sequence-level variants apply one clipped term per trajectory using the
/// sequence ratio. When `kl_beta > 0` the penalty
/// `- beta * mean_i KL_i` is added for any variant. Where the min operator
/// selects a binding clip, no gradient flows through the ratio; exact ties
/// resolve to the unclipped branch.
pub fn loss_and_gradient(
    group: &Group,
    live: &PolicyParams,
    reference: &PolicySnapshot,
    cfg: &ObjectiveConfig,
    variant: AlgorithmVariant,
) -> Result<(f64, GradAccum), ObjectiveError> {
    cfg.validate()?;
    let advantages = group
        .advantages()
        .map_err(|_| ObjectiveError::AdvantagesMissing)?;
    let g = group.size() as f64;
    let eps = cfg.clip_epsilon;
    let mut grad = GradAccum::zeros_like(live);
    let mut objective = 0.0;

    for (trajectory, &advantage) in group.trajectories().iter().zip(advantages) {
        let n = trajectory.agent_token_count() as f64;

        // One pass caches the live distribution at every step; ratios and
        // gradients reuse it.
        let steps: Vec<_> = trajectory
            .agent_steps()
            .map(|step| {
                let lp = live.log_probs(step.features);
                let new_lp = lp[step.token.0 as usize];
                (step, lp, new_lp)
            })
            .collect();

        if variant.sequence_level() {
            let mean_log_ratio = steps
                .iter()
                .map(|(step, _, new_lp)| new_lp - step.old_log_prob)
                .sum::<f64>()
                / n;
            let ratio = mean_log_ratio.exp();
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
            let unclipped_term = ratio * advantage;
            let clipped_term = clipped * advantage;
            objective += unclipped_term.min(clipped_term) / g;
            if unclipped_term <= clipped_term {
                // d/dtheta (s * A) = A * s * mean_t grad log pi.
                let coef = advantage * ratio / (n * g);
                for (step, lp, _) in &steps {
                    let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                    grad.add_log_prob_grad(step.features, &probs, step.token, coef);
                }
            }
        } else {
            for (step, lp, new_lp) in &steps {
                let ratio = (new_lp - step.old_log_prob).exp();
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
                let unclipped_term = ratio * advantage;
                let clipped_term = clipped * advantage;
                objective += unclipped_term.min(clipped_term) / (n * g);
                if unclipped_term <= clipped_term {
                    let coef = advantage * ratio / (n * g);
                    let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                    grad.add_log_prob_grad(step.features, &probs, step.token, coef);
                }
            }
        }

        if cfg.kl_beta > 0.0 {
            let mut kl_mean = 0.0;
            for (step, lp, _) in &steps {
                let lq = reference.log_probs(step.features);
                kl_mean += lp
                    .iter()
                    .zip(&lq)
                    .map(|(p, q)| p.exp() * (p - q))
                    .sum::<f64>()
                    / n;
                grad.add_kl_grad(step.features, lp, &lq, -cfg.kl_beta / (n * g));
            }
            objective -= cfg.kl_beta * kl_mean / g;
        }
    }

    if !objective.is_finite() || !grad.is_finite() {
        return Err(ObjectiveError::NonFiniteLoss);
    }
    Ok((objective, grad))
}

/// Unclipped per-trajectory gradient contribution under one of the two ratio
/// weightings, used for the gradient-variance comparison:
/// token level `A * (1/n) sum_t r_t grad log pi_t`, sequence level
/// `A * s * (1/n) sum_t grad log pi_t`.
pub fn trajectory_grad_contribution(
    trajectory: &Trajectory,
    advantage: f64,
    live: &PolicyParams,
    weighting: RatioWeighting,
) -> GradAccum {
    let n = trajectory.agent_token_count() as f64;
    let mut grad = GradAccum::zeros_like(live);
    match weighting {
        RatioWeighting::TokenLevel => {
            for step in trajectory.agent_steps() {
                let lp = live.log_probs(step.features);
                let ratio = (lp[step.token.0 as usize] - step.old_log_prob).exp();
                let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                grad.add_log_prob_grad(step.features, &probs, step.token, advantage * ratio / n);
            }
        }
        RatioWeighting::SequenceLevel => {
            let ratio = sequence_ratio(trajectory, live);
            for step in trajectory.agent_steps() {
                let lp = live.log_probs(step.features);
                let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                grad.add_log_prob_grad(step.features, &probs, step.token, advantage * ratio / n);
            }
        }
    }
    grad
}
