//! Shared helpers for in-crate tests: hand-wired policies over tiny worlds.

use crate::env::{Fact, KnowledgeBase, Prompt};
use crate::policy::{ngram_feature_index, PolicyParams};
use crate::types::{PromptId, Token};

/// Adds `strength` to exactly one weight cell: the row of this specific
/// n-gram, at the target token's column. Unlike bumping every active feature
/// of a context, this never touches the shared bias row.
pub fn bump_rule(params: &mut PolicyParams, gram: &[Token], target: Token, strength: f64) {
    let row = ngram_feature_index(gram, params.feature_dim()) as usize;
    *params.weight_mut(row, target.0 as usize) += strength;
}

/// One-fact world: fact (6, 7, 8), question `[6, 7]`, gold `[8]`.
pub fn one_fact_world() -> (KnowledgeBase, Prompt) {
    let t = Token;
    let kb = KnowledgeBase::new(
        vec![Fact {
            subject: vec![t(6)],
            relation: vec![t(7)],
            object: vec![t(8)],
        }],
        1,
    );
    let prompt = Prompt {
        prompt_id: PromptId(0),
        question: vec![t(6), t(7)],
        gold_answer: vec![t(8)],
        hops: 1,
    };
    (kb, prompt)
}

/// Policy answering `prompt` with `BEGIN_ANSWER gold END_ANSWER`, where the
/// gold token is emitted with probability close to `p_correct` (a decoy
/// token `decoy` absorbs the rest of the mass).
pub fn answer_policy(
    vocab_size: usize,
    prompt: &Prompt,
    p_correct: f64,
    decoy: Token,
) -> PolicyParams {
    use crate::env::protocol::{BEGIN_ANSWER, END_ANSWER};
    let mut params = PolicyParams::zeros(512, vocab_size, 2);
    let hard = 40.0;
    let q = &prompt.question;
    let gold = prompt.gold_answer[0];
    bump_rule(&mut params, &[q[q.len() - 2], q[q.len() - 1]], BEGIN_ANSWER, hard);
    let choice = [q[q.len() - 1], BEGIN_ANSWER];
    if p_correct >= 1.0 {
        bump_rule(&mut params, &choice, gold, hard);
    } else if p_correct <= 0.0 {
        bump_rule(&mut params, &choice, decoy, hard);
    } else {
        bump_rule(&mut params, &choice, gold, hard + p_correct.ln());
        bump_rule(&mut params, &choice, decoy, hard + (1.0 - p_correct).ln());
    }
    for tok in [gold, decoy] {
        bump_rule(&mut params, &[BEGIN_ANSWER, tok], END_ANSWER, hard);
    }
    params
}
