//! Group rollout under a frozen policy snapshot.
//!
//! Each trajectory samples actions token by token from the snapshot,
//! recording the snapshot's log-probability for every agent token and marking
//! everything the environment returns as retrieved. Trajectories within a
//! group run on independent random substreams derived from
//! (per-call seed, prompt id, trajectory index), so a group is reproducible
//! and its members can be generated concurrently.

use crate::env::{self, protocol, EnvError, KnowledgeBase, Prompt, StepOutcome, TruncationReason};
use crate::exec;
use crate::policy::{substream, PolicySnapshot};
use crate::types::{Group, Terminal, Token, TokenRecord, Trajectory};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    /// Trajectories per group; at least 2, otherwise group normalization is
    /// undefined.
    pub group_size: usize,
    /// Tool calls allowed per episode.
    pub max_turns: usize,
    /// Tokens the agent may emit within one action.
    pub max_action_tokens: usize,
    /// Agent tokens allowed across the whole episode.
    pub max_total_agent_tokens: usize,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            group_size: 4,
            max_turns: 4,
            max_action_tokens: 32,
            max_total_agent_tokens: 48,
            seed: 0,
        }
    }
}

/// Per-group rollout diagnostics.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroupDiagnostics {
    /// Actions rejected as malformed (counted once per offending episode).
    pub malformed_actions: u64,
}

/// Samples exactly G trajectories for `prompt` and scores them.
///
/// Deterministic given (snapshot, prompt, kb, cfg, the rng position): the
/// call draws one base value from `rng` and derives one substream per
/// trajectory from (base, prompt id, index). Environment errors become
/// per-trajectory truncations; the group itself never fails.
pub fn rollout_group(
    snapshot: &PolicySnapshot,
    prompt: &Prompt,
    kb: &KnowledgeBase,
    cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> Group {
    rollout_group_detailed(snapshot, prompt, kb, cfg, rng).0
}

/// [`rollout_group`] plus malformed-action diagnostics.
pub fn rollout_group_detailed(
    snapshot: &PolicySnapshot,
    prompt: &Prompt,
    kb: &KnowledgeBase,
    cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> (Group, GroupDiagnostics) {
    assert!(cfg.group_size >= 2, "group size must be at least 2");
    // The config seed offsets the caller's stream so distinct rollout setups
    // decorrelate even at the same rng position.
    let base = rng.next_u64() ^ cfg.seed;
    let episodes = exec::map_indexed(cfg.group_size, |i| {
        let mut stream = substream(base, prompt.prompt_id.0, i as u64);
        run_episode(snapshot, prompt, kb, cfg, &mut stream)
    });

    let mut diagnostics = GroupDiagnostics::default();
    let mut trajectories = Vec::with_capacity(cfg.group_size);
    let mut rewards = Vec::with_capacity(cfg.group_size);
    for ep in episodes {
        if ep.malformed {
            diagnostics.malformed_actions += 1;
        }
        rewards.push(env::terminal_reward(
            ep.trajectory.answer_span(),
            &prompt.gold_answer,
        ));
        trajectories.push(ep.trajectory);
    }
    let group = Group::new(prompt.prompt_id, trajectories, rewards)
        .expect("rollout produces a well-formed group");
    (group, diagnostics)
}

/// Writes each trajectory of a group to `dir` in the line-record format,
/// one file per trajectory, named `traj_<prompt>_<index>.tsv`.
pub fn dump_group(group: &Group, dir: &std::path::Path) -> std::io::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(group.size());
    for (i, traj) in group.trajectories().iter().enumerate() {
        let path = dir.join(format!("traj_{}_{i}.tsv", group.prompt_id().0));
        std::fs::write(&path, traj.serialize())?;
        paths.push(path);
    }
    Ok(paths)
}

struct Episode {
    trajectory: Trajectory,
    malformed: bool,
}

/// Token source for one episode: either the snapshot's categorical sampler
/// or greedy argmax decoding.
enum Decoder<'a> {
    Sample(&'a mut ChaCha8Rng),
    Greedy,
}

fn run_episode(
    snapshot: &PolicySnapshot,
    prompt: &Prompt,
    kb: &KnowledgeBase,
    cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> Episode {
    run_episode_with(snapshot, prompt, kb, cfg, Decoder::Sample(rng))
}

/// Greedy (argmax) episode, used for evaluation.
pub(crate) fn greedy_episode(
    snapshot: &PolicySnapshot,
    prompt: &Prompt,
    kb: &KnowledgeBase,
    cfg: &RolloutConfig,
) -> Trajectory {
    run_episode_with(snapshot, prompt, kb, cfg, Decoder::Greedy).trajectory
}

fn run_episode_with(
    snapshot: &PolicySnapshot,
    prompt: &Prompt,
    kb: &KnowledgeBase,
    cfg: &RolloutConfig,
    mut decoder: Decoder<'_>,
) -> Episode {
    let params = snapshot.params();
    let mut context: Vec<Token> = prompt.question.clone();
    let mut records: Vec<TokenRecord> = Vec::new();
    let mut agent_tokens = 0usize;
    let mut malformed = false;

    let terminal = 'episode: loop {
        // Sample one action.
        let mut action: Vec<Token> = Vec::new();
        loop {
            if agent_tokens == cfg.max_total_agent_tokens {
                break 'episode Terminal::LengthLimit;
            }
            let feats = params.featurize(&context);
            let (token, log_prob) = match &mut decoder {
                Decoder::Sample(rng) => params.sample_token(&feats, rng),
                Decoder::Greedy => params.argmax_token(&feats),
            };
            records.push(TokenRecord::agent(token, log_prob));
            context.push(token);
            action.push(token);
            agent_tokens += 1;
            if token == protocol::END_TOOL_CALL
                || token == protocol::END_ANSWER
                || action.len() == cfg.max_action_tokens
            {
                break;
            }
        }

        match env::step(kb, &records[..records.len() - action.len()], &action, cfg.max_turns) {
            Ok(StepOutcome::ToolResult(result)) => {
                for token in result {
                    records.push(TokenRecord::retrieved(token));
                    context.push(token);
                }
            }
            Ok(StepOutcome::Terminated(_)) => break Terminal::Answered,
            Ok(StepOutcome::Truncated(TruncationReason::TurnBudget)) => {
                break Terminal::SearchBudgetExhausted
            }
            Ok(StepOutcome::Truncated(TruncationReason::ActionLimit)) => {
                break Terminal::LengthLimit
            }
            Err(EnvError::MalformedAction(_)) | Err(EnvError::EmptyQuery) => {
                malformed = true;
                break Terminal::LengthLimit;
            }
            Err(_) => {
                malformed = true;
                break Terminal::LengthLimit;
            }
        }
    };

    let trajectory = Trajectory::build(
        prompt.prompt_id,
        &prompt.question,
        records,
        terminal,
        params.shape(),
    )
    .expect("episode records satisfy trajectory invariants");
    Episode {
        trajectory,
        malformed,
    }
}
