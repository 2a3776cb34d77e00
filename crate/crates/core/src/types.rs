//! Trajectory, group, and reward data model shared by every other module.
//!
//! All types here are immutable after construction and cheap to share across
//! threads. A [`Trajectory`] additionally caches the featurized context of
//! every agent-generated token at construction time, so that likelihood
//! recomputation (ratios, KL, gradients) is a pure function of the agent's own
//! actions: retrieved tokens enter the optimization only through those frozen
//! contexts, never as loss targets.

use crate::policy::{featurize, ContextFeatures, FeatureShape};
use thiserror::Error;

/// Index into the fixed synthetic vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(pub u32);

impl Token {
    pub fn id(self) -> u32 {
        self.0
    }
}

/// Identifier of a prompt within a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PromptId(pub u64);

/// Whether a token was produced by the policy or injected by the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    AgentGenerated,
    Retrieved,
}

/// One position of an episode: the token, who produced it, and (for agent
/// tokens) the sampling policy's log-probability at generation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenRecord {
    pub token: Token,
    pub provenance: Provenance,
    /// Natural-log probability under the sampling snapshot. Present iff the
    /// record is agent-generated, and never positive.
    pub old_log_prob: Option<f64>,
}

impl TokenRecord {
    pub fn agent(token: Token, old_log_prob: f64) -> Self {
        TokenRecord {
            token,
            provenance: Provenance::AgentGenerated,
            old_log_prob: Some(old_log_prob),
        }
    }

    pub fn retrieved(token: Token) -> Self {
        TokenRecord {
            token,
            provenance: Provenance::Retrieved,
            old_log_prob: None,
        }
    }

    pub fn is_agent(&self) -> bool {
        self.provenance == Provenance::AgentGenerated
    }
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    /// The agent emitted a well-formed answer.
    Answered,
    /// The per-episode tool-call budget was exhausted.
    SearchBudgetExhausted,
    /// A token limit was hit or an action was malformed.
    LengthLimit,
}

impl Terminal {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::Answered => "Answered",
            Terminal::SearchBudgetExhausted => "SearchBudgetExhausted",
            Terminal::LengthLimit => "LengthLimit",
        }
    }

    pub fn parse(s: &str) -> Option<Terminal> {
        match s {
            "Answered" => Some(Terminal::Answered),
            "SearchBudgetExhausted" => Some(Terminal::SearchBudgetExhausted),
            "LengthLimit" => Some(Terminal::LengthLimit),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory has no agent-generated tokens")]
    NoAgentTokens,
    #[error("agent record at index {0} is missing its old log-probability")]
    MissingLogProb(usize),
    #[error("agent record at index {0} has a positive log-probability")]
    PositiveLogProb(usize),
    #[error("retrieved record at index {0} carries a log-probability")]
    RetrievedLogProb(usize),
    #[error("terminal is Answered but no well-formed answer span was found")]
    MissingAnswerSpan,
    #[error("record at index {0} is not a retrieved record")]
    NotRetrieved(usize),
    #[error("malformed trajectory line {0}: {1}")]
    Parse(usize, String),
}

/// The ordered token record of one agent/environment episode, together with
/// the featurized context of each agent token captured at construction time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    prompt_id: PromptId,
    records: Vec<TokenRecord>,
    terminal: Terminal,
    answer_span: Vec<Token>,
    /// Featurized context of each agent token, in record order. Frozen at
    /// construction; likelihood recomputation never re-reads record tokens.
    contexts: Vec<ContextFeatures>,
}

impl Trajectory {
    /// Validates the episode invariants and caches per-agent-token contexts.
    ///
    /// The context of the agent token at record position `i` is the question
    /// followed by the tokens of all records before `i`, featurized under
    /// `shape`. The answer span is extracted from the trailing
    /// `BEGIN_ANSWER .. END_ANSWER` pair when `terminal` is `Answered`.
    pub fn build(
        prompt_id: PromptId,
        question: &[Token],
        records: Vec<TokenRecord>,
        terminal: Terminal,
        shape: FeatureShape,
    ) -> Result<Trajectory, TrajectoryError> {
        let mut agent_count = 0usize;
        for (i, rec) in records.iter().enumerate() {
            match rec.provenance {
                Provenance::AgentGenerated => {
                    agent_count += 1;
                    match rec.old_log_prob {
                        None => return Err(TrajectoryError::MissingLogProb(i)),
                        Some(lp) if lp > 0.0 => {
                            return Err(TrajectoryError::PositiveLogProb(i))
                        }
                        _ => {}
                    }
                }
                Provenance::Retrieved => {
                    if rec.old_log_prob.is_some() {
                        return Err(TrajectoryError::RetrievedLogProb(i));
                    }
                }
            }
        }
        if agent_count == 0 {
            return Err(TrajectoryError::NoAgentTokens);
        }

        let answer_span = match terminal {
            Terminal::Answered => {
                let span = extract_answer_span(&records);
                if span.is_empty() {
                    return Err(TrajectoryError::MissingAnswerSpan);
                }
                span
            }
            _ => Vec::new(),
        };

        let mut contexts = Vec::with_capacity(agent_count);
        let mut context: Vec<Token> = question.to_vec();
        for rec in &records {
            if rec.is_agent() {
                contexts.push(featurize(&context, shape.window, shape.feature_dim));
            }
            context.push(rec.token);
        }

        Ok(Trajectory {
            prompt_id,
            records,
            terminal,
            answer_span,
            contexts,
        })
    }

    pub fn prompt_id(&self) -> PromptId {
        self.prompt_id
    }

    pub fn records(&self) -> &[TokenRecord] {
        &self.records
    }

    pub fn terminal(&self) -> Terminal {
        self.terminal
    }

    /// Answer span extracted at construction; empty unless `Answered`.
    pub fn answer_span(&self) -> &[Token] {
        &self.answer_span
    }

    /// Number of agent-generated tokens; retrieved tokens are excluded.
    /// This is the `|y_i|` used to length-normalize sequence ratios.
    pub fn agent_token_count(&self) -> usize {
        self.contexts.len()
    }

    /// Iterates over (frozen context, token, old log-prob) for every agent
    /// token, in episode order.
    pub fn agent_steps(&self) -> impl Iterator<Item = AgentStep<'_>> {
        self.records
            .iter()
            .filter(|r| r.is_agent())
            .zip(self.contexts.iter())
            .map(|(rec, ctx)| AgentStep {
                features: ctx,
                token: rec.token,
                old_log_prob: rec.old_log_prob.expect("validated at construction"),
            })
    }

    /// Overwrites the token id of a retrieved record in place.
    ///
    /// Cached agent contexts are deliberately left untouched: retrieved
    /// content reaches the objective only through contexts frozen at rollout
    /// time, so this probe must not change any loss or gradient.
    pub fn replace_retrieved_token(
        &mut self,
        record_idx: usize,
        token: Token,
    ) -> Result<(), TrajectoryError> {
        match self.records.get_mut(record_idx) {
            Some(rec) if rec.provenance == Provenance::Retrieved => {
                rec.token = token;
                Ok(())
            }
            _ => Err(TrajectoryError::NotRetrieved(record_idx)),
        }
    }

    /// Serializes to the line format: a header
    /// `prompt_id=<id>\tterminal=<enum>` followed by one record per line,
    /// `token_id \t provenance(A|R) \t old_log_prob` (empty for retrieved).
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "prompt_id={}\tterminal={}\n",
            self.prompt_id.0,
            self.terminal.as_str()
        ));
        for rec in &self.records {
            match rec.provenance {
                Provenance::AgentGenerated => out.push_str(&format!(
                    "{}\tA\t{}\n",
                    rec.token.0,
                    rec.old_log_prob.expect("agent record has log-prob")
                )),
                Provenance::Retrieved => {
                    out.push_str(&format!("{}\tR\t\n", rec.token.0))
                }
            }
        }
        out
    }

    /// Parses the serialized form back into a trajectory. The question and
    /// feature shape are needed to rebuild the cached contexts; for a file
    /// produced by [`Trajectory::serialize`] under the same shape the result
    /// is identical to the original.
    pub fn parse(
        text: &str,
        question: &[Token],
        shape: FeatureShape,
    ) -> Result<Trajectory, TrajectoryError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| TrajectoryError::Parse(0, "empty input".into()))?;
        let (prompt_id, terminal) = parse_header(header)
            .ok_or_else(|| TrajectoryError::Parse(1, "bad header".into()))?;

        let mut records = Vec::new();
        for (lineno, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let token = parts
                .next()
                .and_then(|s| s.parse::<u32>().ok())
                .map(Token)
                .ok_or_else(|| TrajectoryError::Parse(lineno + 1, "bad token id".into()))?;
            let prov = parts
                .next()
                .ok_or_else(|| TrajectoryError::Parse(lineno + 1, "missing provenance".into()))?;
            let lp_field = parts.next().unwrap_or("");
            match prov {
                "A" => {
                    let lp = lp_field.parse::<f64>().map_err(|_| {
                        TrajectoryError::Parse(lineno + 1, "bad log-prob".into())
                    })?;
                    records.push(TokenRecord::agent(token, lp));
                }
                "R" => records.push(TokenRecord::retrieved(token)),
                other => {
                    return Err(TrajectoryError::Parse(
                        lineno + 1,
                        format!("unknown provenance {other:?}"),
                    ))
                }
            }
        }
        Trajectory::build(prompt_id, question, records, terminal, shape)
    }
}

/// One optimized position: the frozen context features, the sampled token,
/// and the sampling snapshot's log-probability.
#[derive(Debug, Clone, Copy)]
pub struct AgentStep<'a> {
    pub features: &'a ContextFeatures,
    pub token: Token,
    pub old_log_prob: f64,
}

fn parse_header(line: &str) -> Option<(PromptId, Terminal)> {
    let mut parts = line.split('\t');
    let id = parts.next()?.strip_prefix("prompt_id=")?.parse::<u64>().ok()?;
    let terminal = Terminal::parse(parts.next()?.strip_prefix("terminal=")?)?;
    Some((PromptId(id), terminal))
}

/// Tokens strictly between the trailing `BEGIN_ANSWER .. END_ANSWER` pair,
/// or empty if the records do not end with a well-formed answer.
fn extract_answer_span(records: &[TokenRecord]) -> Vec<Token> {
    use crate::env::protocol::{BEGIN_ANSWER, END_ANSWER};
    match records.last() {
        Some(rec) if rec.token == END_ANSWER => {}
        _ => return Vec::new(),
    }
    let open = match records[..records.len() - 1]
        .iter()
        .rposition(|r| r.token == BEGIN_ANSWER)
    {
        Some(i) => i,
        None => return Vec::new(),
    };
    records[open + 1..records.len() - 1]
        .iter()
        .map(|r| r.token)
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum GroupError {
    #[error("group needs at least 2 trajectories, got {0}")]
    TooSmall(usize),
    #[error("{trajectories} trajectories but {rewards} rewards")]
    LengthMismatch { trajectories: usize, rewards: usize },
    #[error("reward at index {0} is not binary")]
    NonBinaryReward(usize),
    #[error("advantages not yet computed for this group")]
    AdvantagesMissing,
}

/// G trajectories sampled for one prompt, their binary terminal rewards, and
/// (once computed) their group-normalized advantages.
#[derive(Debug, Clone)]
pub struct Group {
    prompt_id: PromptId,
    trajectories: Vec<Trajectory>,
    rewards: Vec<u8>,
    advantages: Option<Vec<f64>>,
}

impl Group {
    pub fn new(
        prompt_id: PromptId,
        trajectories: Vec<Trajectory>,
        rewards: Vec<u8>,
    ) -> Result<Group, GroupError> {
        if trajectories.len() < 2 {
            return Err(GroupError::TooSmall(trajectories.len()));
        }
        if trajectories.len() != rewards.len() {
            return Err(GroupError::LengthMismatch {
                trajectories: trajectories.len(),
                rewards: rewards.len(),
            });
        }
        if let Some(i) = rewards.iter().position(|r| *r > 1) {
            return Err(GroupError::NonBinaryReward(i));
        }
        Ok(Group {
            prompt_id,
            trajectories,
            rewards,
            advantages: None,
        })
    }

    pub fn prompt_id(&self) -> PromptId {
        self.prompt_id
    }

    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn trajectories_mut(&mut self) -> &mut [Trajectory] {
        &mut self.trajectories
    }

    /// Binary rewards, stored as exact integers so the filter predicate is
    /// integer arithmetic.
    pub fn rewards(&self) -> &[u8] {
        &self.rewards
    }

    pub fn reward_sum(&self) -> u32 {
        self.rewards.iter().map(|&r| u32::from(r)).sum()
    }

    pub fn set_advantages(&mut self, advantages: Vec<f64>) {
        assert_eq!(advantages.len(), self.rewards.len());
        self.advantages = Some(advantages);
    }

    pub fn advantages(&self) -> Result<&[f64], GroupError> {
        self.advantages
            .as_deref()
            .ok_or(GroupError::AdvantagesMissing)
    }
}
