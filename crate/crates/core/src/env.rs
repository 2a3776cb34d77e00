//! The simulated multi-turn search MDP: a synthetic fact store, a lexical
//! search tool, the token protocol, and the terminal reward check.

use crate::types::{Token, TokenRecord};
use thiserror::Error;

/// Reserved protocol vocabulary. The agent opens and closes tool calls and
/// answers with these; the environment emits only the result framing pair.
pub mod protocol {
    use crate::types::Token;

    pub const BEGIN_SEARCH: Token = Token(0);
    pub const END_TOOL_CALL: Token = Token(1);
    pub const BEGIN_ANSWER: Token = Token(2);
    pub const END_ANSWER: Token = Token(3);
    pub const BEGIN_RESULT: Token = Token(4);
    pub const END_RESULT: Token = Token(5);

    /// Number of reserved ids; content tokens start here.
    pub const COUNT: u32 = 6;

    pub fn is_protocol(t: Token) -> bool {
        t.0 < COUNT
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("search query contains no content tokens")]
    EmptyQuery,
    #[error("malformed action: {0}")]
    MalformedAction(&'static str),
    #[error("infeasible environment config: {0}")]
    InfeasibleConfig(String),
    #[error("malformed environment file, line {0}: {1}")]
    Parse(usize, String),
}

/// One stored fact: subject, relation, and object token sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub subject: Vec<Token>,
    pub relation: Vec<Token>,
    pub object: Vec<Token>,
}

impl Fact {
    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        self.subject
            .iter()
            .chain(&self.relation)
            .chain(&self.object)
            .copied()
    }
}

/// The synthetic fact store backing the simulated search tool.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub facts: Vec<Fact>,
    /// Results returned per query, at most.
    pub top_k: usize,
}

impl KnowledgeBase {
    pub fn new(facts: Vec<Fact>, top_k: usize) -> KnowledgeBase {
        assert!(top_k >= 1, "top_k must be at least 1");
        KnowledgeBase { facts, top_k }
    }
}

/// A question with its gold answer and the number of fact hops needed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub prompt_id: crate::types::PromptId,
    pub question: Vec<Token>,
    pub gold_answer: Vec<Token>,
    pub hops: u8,
}

/// Top-k facts by descending distinct-token overlap with the query.
///
/// Protocol tokens are stripped from the query first; facts with zero
/// overlap are excluded; ties break toward the lower fact index. Returns the
/// indices of the selected facts in rank order.
pub fn search(kb: &KnowledgeBase, query: &[Token]) -> Result<Vec<usize>, EnvError> {
    let mut content: Vec<Token> = query
        .iter()
        .copied()
        .filter(|t| !protocol::is_protocol(*t))
        .collect();
    content.sort_unstable();
    content.dedup();
    if content.is_empty() {
        return Err(EnvError::EmptyQuery);
    }

    let mut scored: Vec<(usize, usize)> = kb
        .facts
        .iter()
        .enumerate()
        .filter_map(|(idx, fact)| {
            let overlap = content
                .iter()
                .filter(|q| fact.tokens().any(|t| t == **q))
                .count();
            (overlap > 0).then_some((overlap, idx))
        })
        .collect();
    // Descending overlap, ascending index.
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(kb.top_k);
    Ok(scored.into_iter().map(|(_, idx)| idx).collect())
}

/// Outcome of applying one agent action to the environment.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// Search results, framed per fact by `BEGIN_RESULT .. END_RESULT`.
    /// All of these tokens get `Retrieved` provenance.
    ToolResult(Vec<Token>),
    /// The episode ended with this answer span.
    Terminated(Vec<Token>),
    /// A budget was hit before the action could complete.
    Truncated(TruncationReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationReason {
    /// The per-episode tool-call cap was exceeded.
    TurnBudget,
    /// The action ended at the token limit without a terminator.
    ActionLimit,
}

/// Applies one action to the episode.
///
/// The action must end with `END_TOOL_CALL` or `END_ANSWER`, or have been cut
/// off at the per-action token limit (in which case it is truncated here).
/// `partial` is the episode so far and is used to count completed tool calls:
/// each one appears as a maximal run of retrieved records.
pub fn step(
    kb: &KnowledgeBase,
    partial: &[TokenRecord],
    action: &[Token],
    max_turns: usize,
) -> Result<StepOutcome, EnvError> {
    use protocol::*;

    let last = match action.last() {
        Some(t) => *t,
        None => return Ok(StepOutcome::Truncated(TruncationReason::ActionLimit)),
    };

    if last == END_TOOL_CALL {
        let open = find_unique_opener(action, BEGIN_SEARCH)?;
        let query = &action[open + 1..action.len() - 1];
        check_prefix_and_span(&action[..open], query)?;
        if completed_tool_calls(partial) >= max_turns {
            return Ok(StepOutcome::Truncated(TruncationReason::TurnBudget));
        }
        let hits = search(kb, query)?;
        let mut result = Vec::new();
        if hits.is_empty() {
            result.push(BEGIN_RESULT);
            result.push(END_RESULT);
        } else {
            for idx in hits {
                result.push(BEGIN_RESULT);
                result.extend(kb.facts[idx].tokens());
                result.push(END_RESULT);
            }
        }
        Ok(StepOutcome::ToolResult(result))
    } else if last == END_ANSWER {
        let open = find_unique_opener(action, BEGIN_ANSWER)?;
        let span = &action[open + 1..action.len() - 1];
        check_prefix_and_span(&action[..open], span)?;
        if span.is_empty() {
            return Err(EnvError::MalformedAction("empty answer span"));
        }
        Ok(StepOutcome::Terminated(span.to_vec()))
    } else {
        Ok(StepOutcome::Truncated(TruncationReason::ActionLimit))
    }
}

/// Position of the single opener for the action's terminator; nested or
/// missing openers are malformed.
fn find_unique_opener(action: &[Token], opener: Token) -> Result<usize, EnvError> {
    let mut positions = action[..action.len() - 1]
        .iter()
        .enumerate()
        .filter(|(_, t)| **t == opener)
        .map(|(i, _)| i);
    let first = positions
        .next()
        .ok_or(EnvError::MalformedAction("terminator without opener"))?;
    if positions.next().is_some() {
        return Err(EnvError::MalformedAction("nested opener"));
    }
    Ok(first)
}

/// Any protocol token in the thought prefix or inside the marked span makes
/// the action malformed.
fn check_prefix_and_span(prefix: &[Token], span: &[Token]) -> Result<(), EnvError> {
    if prefix.iter().any(|t| protocol::is_protocol(*t)) {
        return Err(EnvError::MalformedAction("protocol token before opener"));
    }
    if span.iter().any(|t| protocol::is_protocol(*t)) {
        return Err(EnvError::MalformedAction("protocol token inside span"));
    }
    Ok(())
}

/// Number of maximal runs of retrieved records: one per completed tool call.
fn completed_tool_calls(records: &[TokenRecord]) -> usize {
    let mut runs = 0;
    let mut in_run = false;
    for rec in records {
        match (rec.is_agent(), in_run) {
            (false, false) => {
                runs += 1;
                in_run = true;
            }
            (true, _) => in_run = false,
            _ => {}
        }
    }
    runs
}

/// Substring exact match: 1 iff `gold` appears as a contiguous subsequence
/// of `answer_span` under token-id equality. Empty spans score 0 against a
/// nonempty gold; truncated trajectories pass an empty span here.
pub fn terminal_reward(answer_span: &[Token], gold: &[Token]) -> u8 {
    if gold.is_empty() {
        return 1;
    }
    if answer_span.len() < gold.len() {
        return 0;
    }
    let hit = answer_span.windows(gold.len()).any(|w| w == gold);
    u8::from(hit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PromptId;
    use proptest::prelude::*;

    fn t(id: u32) -> Token {
        Token(id)
    }

    fn fact(s: u32, r: u32, o: u32) -> Fact {
        Fact {
            subject: vec![t(s)],
            relation: vec![t(r)],
            object: vec![t(o)],
        }
    }

    fn sample_kb() -> KnowledgeBase {
        KnowledgeBase::new(
            vec![
                fact(10, 20, 11), // 0
                fact(11, 20, 12), // 1
                fact(10, 21, 13), // 2
                fact(14, 21, 10), // 3
            ],
            3,
        )
    }

    /// Brute-force reference: score every fact by distinct-token overlap.
    fn brute_force_search(kb: &KnowledgeBase, query: &[Token]) -> Vec<usize> {
        let mut content: Vec<Token> = query
            .iter()
            .copied()
            .filter(|t| !protocol::is_protocol(*t))
            .collect();
        content.sort_unstable();
        content.dedup();
        let mut ranked: Vec<(usize, usize)> = Vec::new();
        for (idx, fact) in kb.facts.iter().enumerate() {
            let all: Vec<Token> = fact.tokens().collect();
            let overlap = content.iter().filter(|q| all.contains(q)).count();
            if overlap > 0 {
                ranked.push((overlap, idx));
            }
        }
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.truncate(kb.top_k);
        ranked.into_iter().map(|(_, i)| i).collect()
    }

    #[test]
    fn exact_subject_query_ranks_fact_first() {
        let kb = sample_kb();
        // Tokens of fact 2's subject+relation identify it uniquely.
        let hits = search(&kb, &[t(10), t(21), t(13)]).unwrap();
        assert_eq!(hits, brute_force_search(&kb, &[t(10), t(21), t(13)]));
        assert_eq!(hits[0], 2);
    }

    #[test]
    fn disjoint_query_returns_nothing() {
        let kb = sample_kb();
        assert_eq!(search(&kb, &[t(99)]).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn ties_break_by_index() {
        let kb = KnowledgeBase::new(vec![fact(10, 20, 11), fact(10, 21, 12)], 2);
        // Both facts overlap the query on exactly one token.
        assert_eq!(search(&kb, &[t(10)]).unwrap(), vec![0, 1]);
    }

    #[test]
    fn empty_query_is_error() {
        let kb = sample_kb();
        assert_eq!(
            search(&kb, &[protocol::BEGIN_SEARCH]),
            Err(EnvError::EmptyQuery)
        );
    }

    proptest! {
        #[test]
        fn search_matches_brute_force(
            facts in prop::collection::vec((6u32..20, 20u32..24, 6u32..20), 1..12),
            query in prop::collection::vec(0u32..24, 1..5),
            top_k in 1usize..4,
        ) {
            let kb = KnowledgeBase::new(
                facts.into_iter().map(|(s, r, o)| fact(s, r, o)).collect(),
                top_k,
            );
            let query: Vec<Token> = query.into_iter().map(Token).collect();
            let got = search(&kb, &query);
            match got {
                Ok(hits) => {
                    prop_assert_eq!(&hits, &brute_force_search(&kb, &query));
                    prop_assert!(hits.len() <= top_k);
                }
                Err(EnvError::EmptyQuery) => {
                    prop_assert!(query.iter().all(|t| protocol::is_protocol(*t)));
                }
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            }
        }
    }

    #[test]
    fn tool_call_action_returns_framed_results() {
        use protocol::*;
        let kb = sample_kb();
        let action = [BEGIN_SEARCH, t(10), t(21), END_TOOL_CALL];
        let out = step(&kb, &[], &action, 4).unwrap();
        let oracle = brute_force_search(&kb, &[t(10), t(21)]);
        let mut expect = Vec::new();
        for idx in oracle {
            expect.push(BEGIN_RESULT);
            expect.extend(kb.facts[idx].tokens());
            expect.push(END_RESULT);
        }
        assert_eq!(out, StepOutcome::ToolResult(expect));
    }

    #[test]
    fn zero_hit_search_returns_empty_frame() {
        use protocol::*;
        let kb = sample_kb();
        let out = step(&kb, &[], &[BEGIN_SEARCH, t(99), END_TOOL_CALL], 4).unwrap();
        assert_eq!(out, StepOutcome::ToolResult(vec![BEGIN_RESULT, END_RESULT]));
    }

    #[test]
    fn answer_action_terminates() {
        use protocol::*;
        let kb = sample_kb();
        let out = step(&kb, &[], &[BEGIN_ANSWER, t(13), END_ANSWER], 4).unwrap();
        assert_eq!(out, StepOutcome::Terminated(vec![t(13)]));
    }

    #[test]
    fn unterminated_action_truncates() {
        let kb = sample_kb();
        let out = step(&kb, &[], &[t(10), t(11)], 4).unwrap();
        assert_eq!(out, StepOutcome::Truncated(TruncationReason::ActionLimit));
    }

    #[test]
    fn turn_budget_forces_truncation() {
        use protocol::*;
        let kb = sample_kb();
        // Two completed tool calls on the record, budget of two.
        let partial = vec![
            TokenRecord::agent(BEGIN_SEARCH, -0.1),
            TokenRecord::retrieved(BEGIN_RESULT),
            TokenRecord::retrieved(END_RESULT),
            TokenRecord::agent(t(10), -0.1),
            TokenRecord::retrieved(BEGIN_RESULT),
            TokenRecord::retrieved(t(11)),
            TokenRecord::retrieved(END_RESULT),
        ];
        let action = [BEGIN_SEARCH, t(10), END_TOOL_CALL];
        let out = step(&kb, &partial, &action, 2).unwrap();
        assert_eq!(out, StepOutcome::Truncated(TruncationReason::TurnBudget));
        // A higher budget lets it through.
        assert!(matches!(
            step(&kb, &partial, &action, 3).unwrap(),
            StepOutcome::ToolResult(_)
        ));
    }

    #[test]
    fn malformed_actions() {
        use protocol::*;
        let kb = sample_kb();
        let cases: Vec<Vec<Token>> = vec![
            vec![t(10), END_TOOL_CALL],                              // unopened
            vec![BEGIN_SEARCH, BEGIN_SEARCH, t(10), END_TOOL_CALL],  // nested
            vec![t(10), END_ANSWER],                                 // unopened
            vec![BEGIN_ANSWER, END_ANSWER],                          // empty span
            vec![BEGIN_ANSWER, BEGIN_SEARCH, END_ANSWER],            // protocol in span
            vec![BEGIN_SEARCH, t(10), BEGIN_ANSWER, END_TOOL_CALL],  // protocol in span
            vec![END_RESULT, BEGIN_ANSWER, t(10), END_ANSWER],       // protocol in prefix
        ];
        for action in cases {
            assert!(
                matches!(step(&kb, &[], &action, 4), Err(EnvError::MalformedAction(_))),
                "expected malformed: {action:?}"
            );
        }
        // Content-token thoughts before the opener are fine.
        let ok = [t(15), t(16), BEGIN_ANSWER, t(13), END_ANSWER];
        assert!(matches!(
            step(&kb, &[], &ok, 4).unwrap(),
            StepOutcome::Terminated(_)
        ));
    }

    #[test]
    fn tool_result_tokens_stay_framed() {
        use protocol::*;
        let kb = sample_kb();
        for query in [vec![t(10)], vec![t(20)], vec![t(10), t(21), t(14)]] {
            let mut action = vec![BEGIN_SEARCH];
            action.extend(query);
            action.push(END_TOOL_CALL);
            if let StepOutcome::ToolResult(tokens) = step(&kb, &[], &action, 4).unwrap() {
                let mut depth = 0i32;
                for tok in &tokens {
                    if *tok == BEGIN_RESULT {
                        depth += 1;
                    } else if *tok == END_RESULT {
                        depth -= 1;
                    } else {
                        assert!(depth > 0, "unframed retrieved token");
                    }
                    assert!((0..=1).contains(&depth));
                }
                assert_eq!(depth, 0);
            } else {
                panic!("expected tool result");
            }
        }
    }

    #[test]
    fn reward_identity_containment() {
        let gold = [t(30), t(31)];
        assert_eq!(terminal_reward(&gold, &gold), 1);
    }

    #[test]
    fn reward_matches_contained_span() {
        // "The Vice President" contains "vice president".
        let the = t(40);
        let vice = t(41);
        let president = t(42);
        assert_eq!(terminal_reward(&[the, vice, president], &[vice, president]), 1);
        assert_eq!(terminal_reward(&[the, president, vice], &[vice, president]), 0);
    }

    #[test]
    fn reward_disjoint_is_zero() {
        assert_eq!(terminal_reward(&[t(1), t(2)], &[t(3)]), 0);
        assert_eq!(terminal_reward(&[], &[t(3)]), 0);
    }

    proptest! {
        #[test]
        fn reward_monotone_under_extension(
            span in prop::collection::vec(6u32..12, 0..8),
            gold in prop::collection::vec(6u32..12, 1..4),
            prefix in prop::collection::vec(6u32..12, 0..4),
            suffix in prop::collection::vec(6u32..12, 0..4),
        ) {
            let span: Vec<Token> = span.into_iter().map(Token).collect();
            let gold: Vec<Token> = gold.into_iter().map(Token).collect();
            if terminal_reward(&span, &gold) == 1 {
                let mut extended: Vec<Token> = prefix.into_iter().map(Token).collect();
                extended.extend(&span);
                extended.extend(suffix.into_iter().map(Token));
                prop_assert_eq!(terminal_reward(&extended, &gold), 1);
            }
        }
    }

    #[test]
    fn prompt_fields_hold() {
        let p = Prompt {
            prompt_id: PromptId(7),
            question: vec![t(10), t(20)],
            gold_answer: vec![t(11)],
            hops: 1,
        };
        assert_eq!(p.hops, 1);
    }
}
