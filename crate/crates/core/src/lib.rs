//! Desk-scale laboratory for group-based clipped-surrogate policy
//! optimization over a simulated multi-turn search environment.
//!
//! The crate provides:
//!
//! * a differentiable categorical token policy with analytic gradients
//!   ([`policy`]);
//! * a synthetic search MDP with a lexical retriever and substring-match
//!   terminal reward ([`env`], [`kbgen`]);
//! * group rollout under frozen snapshots ([`rollout`]);
//! * token- and sequence-level clipped surrogate objectives with
//!   group-normalized advantages and optional KL regularization
//!   ([`objectives`]);
//! * dynamic outcome-based sample filtering ([`filtering`]);
//! * the training loop, greedy evaluation, and metrics ([`trainer`],
//!   [`metrics`]);
//! * protocol-primed initialization for the experiments ([`priming`]).
//!
//! Group rollouts, buffer losses, and evaluation run data-parallel on rayon
//! when the default `parallel` feature is enabled; disabling it yields a
//! dependency-light sequential build with bit-identical results.

pub mod env;
pub mod exec;
pub mod filtering;
pub mod kbgen;
pub mod metrics;
pub mod objectives;
pub mod policy;
pub mod priming;
pub mod rollout;
#[cfg(test)]
pub(crate) mod testutil;
pub mod trainer;
pub mod types;

pub use env::{search, step, terminal_reward, KnowledgeBase, Prompt};
pub use filtering::{fill_buffer, passes_filter, FilterStats};
pub use objectives::{
    clipped_surrogate, group_advantages, kl_penalty, loss_and_gradient, sequence_ratio,
    token_ratios, AlgorithmVariant, ObjectiveConfig, StdMode,
};
pub use policy::{featurize, FeatureShape, PolicyParams, PolicySnapshot};
pub use rollout::{rollout_group, RolloutConfig};
pub use trainer::{evaluate, train, StepReport, TrainConfig};
pub use types::{Group, PromptId, Token, TokenRecord, Trajectory};
