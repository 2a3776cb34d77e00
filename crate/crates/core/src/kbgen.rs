//! Deterministic synthetic world generation and the KB/prompt file formats.
//!
//! The generated world is layered so that every question is answerable by
//! lexical search alone:
//!
//! * entities come in three disjoint tiers: query entities `Q`, middle
//!   entities `M`, and answer entities `A`;
//! * hop-1 facts map `Q -> M` under each hop relation, one fact per
//!   (entity, relation) pair, so a `[subject, relation]` query has a unique
//!   best-overlap fact;
//! * hop-2 facts map `M -> A` bijectively under a single chain relation, so
//!   every `A` entity occurs in some fact and the vocabulary size is
//!   recoverable from the KB file.
//!
//! One-hop prompts ask `[m, chain]`; two-hop prompts ask `[e, r, chain]` and
//! require chaining a hop-1 fact into a hop-2 fact. The object tier therefore
//! tells the agent whether to keep searching (tier `M`) or answer (tier `A`).
//!
//! Vocabulary id layout: 6 protocol ids, then filler ids (never used in
//! facts), then hop relations, the chain relation, and finally the entities
//! `Q ++ M ++ A`.

use crate::env::{protocol, EnvError, Fact, KnowledgeBase, Prompt};
use crate::policy::substream;
use crate::types::{PromptId, Token};
use rand::RngCore;
use std::fmt::Write as _;

/// Which prompt kinds to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopsMix {
    OneHopOnly,
    TwoHopOnly,
    Mixed,
}

#[derive(Debug, Clone)]
pub struct KbGenConfig {
    pub seed: u64,
    /// Total entities across the three tiers; at least 4.
    pub n_entities: usize,
    /// Hop relations plus the chain relation; at least 1.
    pub n_relations: usize,
    /// Unused distractor ids padding the vocabulary.
    pub n_filler: usize,
    pub hops_mix: HopsMix,
    /// Results per query for the generated KB.
    pub top_k: usize,
}

impl Default for KbGenConfig {
    fn default() -> Self {
        KbGenConfig {
            seed: 0,
            n_entities: 30,
            n_relations: 4,
            n_filler: 20,
            hops_mix: HopsMix::Mixed,
            top_k: 1,
        }
    }
}

/// Tier structure of a generated world, in vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KbSchema {
    pub hop_relations: Vec<Token>,
    pub chain_relation: Token,
    pub query_entities: Vec<Token>,
    pub middle_entities: Vec<Token>,
    pub answer_entities: Vec<Token>,
    pub vocab_size: usize,
}

/// Deterministically generates a knowledge base and its full prompt list.
pub fn generate_kb(cfg: &KbGenConfig) -> Result<(KnowledgeBase, Vec<Prompt>), EnvError> {
    if cfg.n_entities < 4 {
        return Err(EnvError::InfeasibleConfig(format!(
            "need at least 4 entities, got {}",
            cfg.n_entities
        )));
    }
    if cfg.n_relations < 1 {
        return Err(EnvError::InfeasibleConfig("need at least 1 relation".into()));
    }
    if cfg.n_relations < 2 && cfg.hops_mix != HopsMix::OneHopOnly {
        return Err(EnvError::InfeasibleConfig(
            "two-hop prompts need a hop relation besides the chain relation".into(),
        ));
    }

    let schema = layout(cfg);
    let mut rng = substream(cfg.seed, 0x6b62, 0);

    // Hop-1 facts: one object draw per (query entity, hop relation).
    let mut facts = Vec::new();
    for &rel in &schema.hop_relations {
        for &e in &schema.query_entities {
            let m = schema.middle_entities
                [(rng.next_u64() % schema.middle_entities.len() as u64) as usize];
            facts.push(Fact {
                subject: vec![e],
                relation: vec![rel],
                object: vec![m],
            });
        }
    }
    // Hop-2 facts: a random bijection M -> A under the chain relation, so
    // every answer entity appears in the KB.
    let perm = permutation(schema.answer_entities.len(), &mut rng);
    for (i, &m) in schema.middle_entities.iter().enumerate() {
        facts.push(Fact {
            subject: vec![m],
            relation: vec![schema.chain_relation],
            object: vec![schema.answer_entities[perm[i]]],
        });
    }
    let kb = KnowledgeBase::new(facts, cfg.top_k);

    let mut prompts = Vec::new();
    let mut next_id = 0u64;
    if cfg.hops_mix != HopsMix::TwoHopOnly {
        for (i, &m) in schema.middle_entities.iter().enumerate() {
            prompts.push(Prompt {
                prompt_id: PromptId(next_id),
                question: vec![m, schema.chain_relation],
                gold_answer: vec![schema.answer_entities[perm[i]]],
                hops: 1,
            });
            next_id += 1;
        }
    }
    if cfg.hops_mix != HopsMix::OneHopOnly {
        for (ri, &rel) in schema.hop_relations.iter().enumerate() {
            for (ei, &e) in schema.query_entities.iter().enumerate() {
                let m = kb.facts[ri * schema.query_entities.len() + ei].object[0];
                let mi = schema
                    .middle_entities
                    .iter()
                    .position(|&x| x == m)
                    .expect("hop-1 objects are middle entities");
                prompts.push(Prompt {
                    prompt_id: PromptId(next_id),
                    question: vec![e, rel, schema.chain_relation],
                    gold_answer: vec![schema.answer_entities[perm[mi]]],
                    hops: 2,
                });
                next_id += 1;
            }
        }
    }

    Ok((kb, prompts))
}

/// Vocabulary layout for a generator config. Middle and answer tiers get an
/// equal share (about 30% each) and query entities take the rest.
fn layout(cfg: &KbGenConfig) -> KbSchema {
    let m_count = (cfg.n_entities * 3 / 10).max(1);
    let q_count = cfg.n_entities - 2 * m_count;
    let hop_rel_count = cfg.n_relations - 1;

    let mut next = protocol::COUNT + cfg.n_filler as u32;
    let mut take = |n: usize| -> Vec<Token> {
        let ids: Vec<Token> = (next..next + n as u32).map(Token).collect();
        next += n as u32;
        ids
    };
    let hop_relations = take(hop_rel_count);
    let chain_relation = take(1)[0];
    let query_entities = take(q_count);
    let middle_entities = take(m_count);
    let answer_entities = take(m_count);
    KbSchema {
        hop_relations,
        chain_relation,
        query_entities,
        middle_entities,
        answer_entities,
        vocab_size: next as usize,
    }
}

fn permutation(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Recovers the tier structure from a KB of single-token facts, for priming
/// and diagnostics. Returns `None` when the KB does not have the layered
/// shape (multi-token fields, several chain relations, overlapping tiers).
pub fn infer_schema(kb: &KnowledgeBase) -> Option<KbSchema> {
    let mut subjects = Vec::new();
    let mut objects = Vec::new();
    let mut relations = Vec::new();
    for fact in &kb.facts {
        if fact.subject.len() != 1 || fact.relation.len() != 1 || fact.object.len() != 1 {
            return None;
        }
        subjects.push(fact.subject[0]);
        objects.push(fact.object[0]);
        relations.push(fact.relation[0]);
    }
    let dedup = |mut v: Vec<Token>| {
        v.sort_unstable();
        v.dedup();
        v
    };
    let subjects = dedup(subjects);
    let objects = dedup(objects);
    let relations = dedup(relations);

    let middle: Vec<Token> = subjects
        .iter()
        .copied()
        .filter(|s| objects.binary_search(s).is_ok())
        .collect();
    let query: Vec<Token> = subjects
        .iter()
        .copied()
        .filter(|s| objects.binary_search(s).is_err())
        .collect();
    let answer: Vec<Token> = objects
        .iter()
        .copied()
        .filter(|o| subjects.binary_search(o).is_err())
        .collect();
    if middle.is_empty() || answer.is_empty() {
        return None;
    }

    // The chain relation is whatever maps middle entities onward; all others
    // are hop relations.
    let mut chain = Vec::new();
    let mut hop = Vec::new();
    for &rel in &relations {
        let from_middle = kb
            .facts
            .iter()
            .any(|f| f.relation[0] == rel && middle.contains(&f.subject[0]));
        if from_middle {
            chain.push(rel);
        } else {
            hop.push(rel);
        }
    }
    if chain.len() != 1 {
        return None;
    }
    let vocab_size = kb
        .facts
        .iter()
        .flat_map(|f| f.tokens())
        .map(|t| t.0 as usize + 1)
        .max()?;
    Some(KbSchema {
        hop_relations: hop,
        chain_relation: chain[0],
        query_entities: query,
        middle_entities: middle,
        answer_entities: answer,
        vocab_size,
    })
}

/// Smallest vocabulary covering the KB, the prompts, and the protocol ids.
pub fn infer_vocab_size(kb: &KnowledgeBase, prompts: &[Prompt]) -> usize {
    let kb_max = kb.facts.iter().flat_map(|f| f.tokens()).map(|t| t.0).max();
    let prompt_max = prompts
        .iter()
        .flat_map(|p| p.question.iter().chain(&p.gold_answer))
        .map(|t| t.0)
        .max();
    let max = kb_max.into_iter().chain(prompt_max).max().unwrap_or(0);
    (max + 1).max(protocol::COUNT) as usize
}

/// Deterministic split into training and held-out prompt lists.
pub fn split_prompts(
    prompts: &[Prompt],
    eval_fraction: f64,
    seed: u64,
) -> (Vec<Prompt>, Vec<Prompt>) {
    let mut rng = substream(seed, 0x5370, 0);
    let mut order: Vec<usize> = (0..prompts.len()).collect();
    for i in (1..order.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let n_eval = ((prompts.len() as f64) * eval_fraction).round() as usize;
    let n_eval = n_eval.min(prompts.len().saturating_sub(1));
    let mut eval: Vec<Prompt> = order[..n_eval].iter().map(|&i| prompts[i].clone()).collect();
    let mut train: Vec<Prompt> = order[n_eval..].iter().map(|&i| prompts[i].clone()).collect();
    train.sort_by_key(|p| p.prompt_id.0);
    eval.sort_by_key(|p| p.prompt_id.0);
    (train, eval)
}

fn write_token_seq(out: &mut String, tokens: &[Token]) {
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{}", t.0);
    }
}

fn parse_token_seq(field: &str, lineno: usize) -> Result<Vec<Token>, EnvError> {
    field
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map(Token)
                .map_err(|_| EnvError::Parse(lineno, format!("bad token {s:?}")))
        })
        .collect()
}

/// KB file format: one fact per line,
/// `subject_tokens<TAB>relation_tokens<TAB>object_tokens`, space-separated ids.
pub fn kb_to_string(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    for fact in &kb.facts {
        write_token_seq(&mut out, &fact.subject);
        out.push('\t');
        write_token_seq(&mut out, &fact.relation);
        out.push('\t');
        write_token_seq(&mut out, &fact.object);
        out.push('\n');
    }
    out
}

pub fn kb_from_string(text: &str, top_k: usize) -> Result<KnowledgeBase, EnvError> {
    let mut facts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let mut next_seq = || {
            fields
                .next()
                .ok_or_else(|| EnvError::Parse(lineno + 1, "missing field".into()))
                .and_then(|f| parse_token_seq(f, lineno + 1))
        };
        facts.push(Fact {
            subject: next_seq()?,
            relation: next_seq()?,
            object: next_seq()?,
        });
    }
    Ok(KnowledgeBase::new(facts, top_k))
}

/// Prompts file format: `question_tokens<TAB>gold_tokens<TAB>hops` per line.
pub fn prompts_to_string(prompts: &[Prompt]) -> String {
    let mut out = String::new();
    for p in prompts {
        write_token_seq(&mut out, &p.question);
        out.push('\t');
        write_token_seq(&mut out, &p.gold_answer);
        let _ = writeln!(out, "\t{}", p.hops);
    }
    out
}

pub fn prompts_from_string(text: &str) -> Result<Vec<Prompt>, EnvError> {
    let mut prompts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(EnvError::Parse(lineno + 1, "expected 3 fields".into()));
        }
        let hops: u8 = fields[2]
            .parse()
            .map_err(|_| EnvError::Parse(lineno + 1, format!("bad hops {:?}", fields[2])))?;
        prompts.push(Prompt {
            prompt_id: PromptId(prompts.len() as u64),
            question: parse_token_seq(fields[0], lineno + 1)?,
            gold_answer: parse_token_seq(fields[1], lineno + 1)?,
            hops,
        });
    }
    Ok(prompts)
}
