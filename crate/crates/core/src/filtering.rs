//! Dynamic outcome-based filtering and the buffer-filling loop.
//!
//! A group trains only if its rewards are neither all 0 nor all 1, so the
//! group advantage signal always has nonzero variance. The filling loop
//! samples prompts with replacement and keeps rolling out until the buffer
//! holds B accepted groups, guarded against starvation by a hard attempt cap.

use crate::env::{KnowledgeBase, Prompt};
use crate::objectives::AlgorithmVariant;
use crate::policy::PolicySnapshot;
use crate::rollout::{rollout_group_detailed, RolloutConfig};
use crate::types::Group;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Admission counters for one buffer fill.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub groups_sampled: u64,
    pub groups_accepted: u64,
    pub rejected_all_correct: u64,
    pub rejected_all_wrong: u64,
    /// Malformed agent actions observed during rollout (diagnostic; not part
    /// of the admission accounting identity).
    pub malformed_actions: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum FillError {
    #[error("buffer starvation: {accepted} of {wanted} groups after {attempts} attempts")]
    BufferStarvation {
        attempts: usize,
        accepted: usize,
        wanted: usize,
    },
}

/// Eq-9 admission predicate `0 < sum(R) < G`, in exact integer arithmetic.
pub fn passes_filter(rewards: &[u8]) -> bool {
    debug_assert!(rewards.len() >= 2);
    let sum: u32 = rewards.iter().map(|&r| u32::from(r)).sum();
    sum > 0 && sum < rewards.len() as u32
}

#[derive(Debug, Clone)]
pub struct FillConfig {
    /// Accepted groups required in the buffer.
    pub batch_size: usize,
    /// Hard cap on group samples before giving up; guards the otherwise
    /// unbounded filling loop.
    pub max_attempts: usize,
}

impl FillConfig {
    /// Default guard: 50 attempts per required group.
    pub fn with_default_attempts(batch_size: usize) -> FillConfig {
        FillConfig {
            batch_size,
            max_attempts: 50 * batch_size,
        }
    }
}

/// A filled buffer plus everything observed while filling it.
#[derive(Debug, Clone)]
pub struct FilledBuffer {
    pub groups: Vec<Group>,
    pub stats: FilterStats,
    /// Sum and count of rewards over every sampled trajectory, including
    /// those in rejected groups. `reward_sum / reward_count` is the policy's
    /// actual success rate at this snapshot.
    pub reward_sum: u64,
    pub reward_count: u64,
}

impl FilledBuffer {
    pub fn mean_sampled_reward(&self) -> f64 {
        if self.reward_count == 0 {
            0.0
        } else {
            self.reward_sum as f64 / self.reward_count as f64
        }
    }
}

/// Fills a buffer of `cfg.batch_size` groups, applying the outcome filter
/// for filtering variants and admitting everything otherwise.
///
/// Prompts are drawn uniformly with replacement. Admission decisions depend
/// only on the reward vector. Group proposals may roll out their
/// trajectories concurrently, but admission runs through this single loop,
/// so the buffer order and all counters are deterministic given the rng.
pub fn fill_buffer(
    snapshot: &PolicySnapshot,
    prompts: &[Prompt],
    kb: &KnowledgeBase,
    cfg: &FillConfig,
    rollout_cfg: &RolloutConfig,
    variant: AlgorithmVariant,
    rng: &mut ChaCha8Rng,
) -> Result<FilledBuffer, FillError> {
    assert!(cfg.batch_size >= 1);
    assert!(cfg.max_attempts >= cfg.batch_size);
    assert!(!prompts.is_empty(), "prompt set must be nonempty");

    let mut buffer = FilledBuffer {
        groups: Vec::with_capacity(cfg.batch_size),
        stats: FilterStats::default(),
        reward_sum: 0,
        reward_count: 0,
    };

    while buffer.groups.len() < cfg.batch_size {
        if buffer.stats.groups_sampled as usize >= cfg.max_attempts {
            return Err(FillError::BufferStarvation {
                attempts: cfg.max_attempts,
                accepted: buffer.groups.len(),
                wanted: cfg.batch_size,
            });
        }
        let prompt = &prompts[(rng.next_u64() % prompts.len() as u64) as usize];
        let (group, diagnostics) = rollout_group_detailed(snapshot, prompt, kb, rollout_cfg, rng);
        buffer.stats.groups_sampled += 1;
        buffer.stats.malformed_actions += diagnostics.malformed_actions;
        buffer.reward_sum += u64::from(group.reward_sum());
        buffer.reward_count += group.size() as u64;

        let sum = group.reward_sum();
        if !variant.uses_filter() || passes_filter(group.rewards()) {
            buffer.stats.groups_accepted += 1;
            buffer.groups.push(group);
        } else if sum == 0 {
            buffer.stats.rejected_all_wrong += 1;
        } else {
            buffer.stats.rejected_all_correct += 1;
        }
    }
    Ok(buffer)
}
