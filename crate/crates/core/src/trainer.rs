//! The end-to-end training loop: snapshot, fill, normalize, update, evaluate.

use crate::env::KnowledgeBase;
use crate::env::Prompt;
use crate::exec;
use crate::filtering::{fill_buffer, FillConfig, FillError, FilterStats};
use crate::objectives::{
    group_advantages, loss_and_gradient, AlgorithmVariant, ObjectiveConfig, ObjectiveError,
};
use crate::policy::{substream, GradAccum, PolicyParams};
use crate::rollout::{greedy_episode, RolloutConfig};
use crate::types::Group;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub variant: AlgorithmVariant,
    /// Training steps; each fills one buffer and updates the policy.
    pub steps: usize,
    /// Accepted groups per buffer (B).
    pub batch_size: usize,
    /// Ascent step size. Zero freezes the policy while still producing
    /// reports.
    pub lr: f64,
    /// Gradient updates per filled buffer. 1 matches the literal training
    /// loop; higher values re-evaluate ratios against the step's snapshot
    /// after each inner update.
    pub epochs: usize,
    /// Rescale the gradient when its L2 norm exceeds this.
    pub grad_clip_norm: Option<f64>,
    pub objective: ObjectiveConfig,
    pub rollout: RolloutConfig,
    /// Evaluate (and checkpoint) every this many steps.
    pub eval_every: usize,
    pub seed: u64,
    /// Group-sample cap per buffer; defaults to 50 * batch_size.
    pub max_attempts: Option<usize>,
    /// Record real wall time per step. Off by default so that metrics are a
    /// pure function of the config and seed.
    pub record_wall_time: bool,
}

impl TrainConfig {
    pub fn new(variant: AlgorithmVariant) -> TrainConfig {
        TrainConfig {
            variant,
            steps: 500,
            batch_size: 8,
            lr: 0.8,
            epochs: 1,
            grad_clip_norm: None,
            objective: ObjectiveConfig::for_variant(variant),
            rollout: RolloutConfig::default(),
            eval_every: 10,
            seed: 0,
            max_attempts: None,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps < 1 {
            return Err(TrainError::InvalidConfig("steps must be at least 1"));
        }
        if self.eval_every < 1 {
            return Err(TrainError::InvalidConfig("eval_every must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig("lr must be finite and non-negative"));
        }
        if self.rollout.group_size < 2 {
            return Err(TrainError::InvalidConfig("group_size must be at least 2"));
        }
        self.objective
            .validate()
            .map_err(|_| TrainError::InvalidConfig("invalid objective config"))?;
        Ok(())
    }

    fn fill_config(&self) -> FillConfig {
        FillConfig {
            batch_size: self.batch_size,
            max_attempts: self.max_attempts.unwrap_or(50 * self.batch_size),
        }
    }
}

/// Everything observed during one training step.
#[derive(Debug, Clone)]
pub struct StepReport {
    /// 1-based step index.
    pub step: usize,
    /// Mean reward over every trajectory sampled this step, including those
    /// in rejected groups: the policy's actual success rate at the step's
    /// snapshot.
    pub mean_reward: f64,
    /// Objective value of the buffer at the snapshot (first inner epoch).
    pub objective: f64,
    /// L2 norm of the first inner epoch's gradient, before clipping.
    pub grad_norm: f64,
    pub filter: FilterStats,
    /// Held-out greedy reward; present on evaluation steps only.
    pub eval_reward: Option<f64>,
    /// Step wall time, or 0 when timing is off.
    pub wall_ms: u64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("step {step}: {source}")]
    BufferStarvation { step: usize, source: FillError },
    #[error("step {step}: non-finite loss or gradient")]
    NonFiniteLoss { step: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(&'static str),
    #[error("observer failed: {0}")]
    Observer(String),
}

/// Receives step reports and periodic checkpoints during training.
pub trait TrainObserver {
    fn on_step(&mut self, _report: &StepReport) -> Result<(), String> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _step: usize, _params: &PolicyParams) -> Result<(), String> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Runs the training loop from `initial`, returning the final parameters and
/// one report per step. Fully deterministic given the config.
pub fn train(
    cfg: &TrainConfig,
    kb: &KnowledgeBase,
    prompts: &[Prompt],
    eval_prompts: &[Prompt],
    initial: PolicyParams,
) -> Result<(PolicyParams, Vec<StepReport>), TrainError> {
    train_with_observer(cfg, kb, prompts, eval_prompts, initial, &mut NoopObserver)
}

pub fn train_with_observer(
    cfg: &TrainConfig,
    kb: &KnowledgeBase,
    prompts: &[Prompt],
    eval_prompts: &[Prompt],
    initial: PolicyParams,
    observer: &mut dyn TrainObserver,
) -> Result<(PolicyParams, Vec<StepReport>), TrainError> {
    cfg.validate()?;
    assert!(!prompts.is_empty(), "prompt set must be nonempty");

    let mut params = initial;
    // The reference policy is the initial policy, frozen once and never
    // updated.
    let reference = params.snapshot(0);
    let mut rng = substream(cfg.seed, 0x747261, 0);
    let fill_cfg = cfg.fill_config();
    let mut reports = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let started = Instant::now();
        let snapshot = params.snapshot(step as u64);

        let buffer = fill_buffer(
            &snapshot,
            prompts,
            kb,
            &fill_cfg,
            &cfg.rollout,
            cfg.variant,
            &mut rng,
        )
        .map_err(|source| TrainError::BufferStarvation { step, source })?;
        let mean_reward = buffer.mean_sampled_reward();
        let filter_stats = buffer.stats;

        let mut groups = buffer.groups;
        for group in &mut groups {
            group.set_advantages(group_advantages(
                group.rewards(),
                cfg.objective.advantage_delta,
            ));
        }

        let mut objective_at_snapshot = 0.0;
        let mut grad_norm_at_snapshot = 0.0;
        for epoch in 0..cfg.epochs {
            let (objective, gradient) =
                buffer_loss_and_gradient(&groups, &params, &reference, cfg, step)?;
            let norm = gradient.l2_norm();
            if epoch == 0 {
                objective_at_snapshot = objective;
                grad_norm_at_snapshot = norm;
            }
            if cfg.lr > 0.0 {
                let mut gradient = gradient;
                if let Some(max_norm) = cfg.grad_clip_norm {
                    if norm > max_norm {
                        gradient.scale(max_norm / norm);
                    }
                }
                params
                    .apply_gradient(&gradient, cfg.lr)
                    .map_err(|_| TrainError::NonFiniteLoss { step })?;
            }
        }

        let eval_reward = if step % cfg.eval_every == 0 && !eval_prompts.is_empty() {
            Some(evaluate(&params, eval_prompts, kb, &cfg.rollout))
        } else {
            None
        };

        let report = StepReport {
            step,
            mean_reward,
            objective: objective_at_snapshot,
            grad_norm: grad_norm_at_snapshot,
            filter: filter_stats,
            eval_reward,
            wall_ms: if cfg.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        observer.on_step(&report).map_err(TrainError::Observer)?;
        if step % cfg.eval_every == 0 {
            observer
                .on_checkpoint(step, &params)
                .map_err(TrainError::Observer)?;
        }
        reports.push(report);
    }

    Ok((params, reports))
}

/// Mean objective and mean gradient over the buffer. Groups evaluate
/// concurrently; the fold runs in buffer order so the sum is reproducible.
fn buffer_loss_and_gradient(
    groups: &[Group],
    params: &PolicyParams,
    reference: &crate::policy::PolicySnapshot,
    cfg: &TrainConfig,
    step: usize,
) -> Result<(f64, GradAccum), TrainError> {
    let results: Vec<Result<(f64, GradAccum), ObjectiveError>> =
        exec::map_indexed(groups.len(), |i| {
            loss_and_gradient(&groups[i], params, reference, &cfg.objective, cfg.variant)
        });
    let mut objective = 0.0;
    let mut gradient = GradAccum::zeros_like(params);
    for result in results {
        let (value, grad) = result.map_err(|_| TrainError::NonFiniteLoss { step })?;
        objective += value;
        gradient.add_assign(&grad);
    }
    let scale = 1.0 / groups.len() as f64;
    gradient.scale(scale);
    Ok((objective * scale, gradient))
}

/// Greedy (argmax) decoding over `prompts`, one trajectory each; returns the
/// fraction that earned the terminal reward.
pub fn evaluate(
    params: &PolicyParams,
    prompts: &[Prompt],
    kb: &KnowledgeBase,
    rollout_cfg: &RolloutConfig,
) -> f64 {
    assert!(!prompts.is_empty(), "evaluation prompt set must be nonempty");
    let snapshot = params.snapshot(u64::MAX);
    let rewards = exec::map_indexed(prompts.len(), |i| {
        let trajectory = greedy_episode(&snapshot, &prompts[i], kb, rollout_cfg);
        u32::from(crate::env::terminal_reward(
            trajectory.answer_span(),
            &prompts[i].gold_answer,
        ))
    });
    rewards.iter().sum::<u32>() as f64 / prompts.len() as f64
}
