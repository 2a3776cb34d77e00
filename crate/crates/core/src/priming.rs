//! Protocol-primed policy initialization.
//!
//! Reinforcement learning from a sparse terminal reward cannot bootstrap a
//! uniform policy here: a random episode essentially never emits a
//! well-formed search-and-answer sequence, so every group would be all-wrong
//! and filtered training would starve. The experiments therefore start from
//! a primed policy, standing in for the pretrained model the full-scale
//! setup fine-tunes: the tool-call protocol skeleton is installed with
//! strong weights, while the content transitions (echoing entities into
//! queries, extracting answers from results) get deliberately uneven,
//! noisy weights. The result answers a fraction of prompts and fails the
//! rest, which is exactly the mixed-outcome regime group-based training
//! needs; sharpening the weak transitions is what there is to learn.

use crate::env::protocol;
use crate::kbgen::KbSchema;
use crate::policy::{ngram_feature_index, substream, FeatureShape, PolicyParams};
use crate::types::Token;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct PrimingConfig {
    /// Weight of protocol-skeleton transitions (open/close markers, the
    /// continue-vs-answer decision).
    pub skeleton_strength: f64,
    /// Per-rule content-transition weight, drawn uniformly from this range.
    pub echo_strength: (f64, f64),
    /// Standard deviation of the Gaussian noise over every weight.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PrimingConfig {
    fn default() -> Self {
        PrimingConfig {
            skeleton_strength: 12.0,
            echo_strength: (4.0, 9.0),
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

/// Builds primed parameters for a layered world.
pub fn primed_params(
    schema: &KbSchema,
    vocab_size: usize,
    shape: FeatureShape,
    cfg: &PrimingConfig,
) -> PolicyParams {
    use protocol::{BEGIN_ANSWER, BEGIN_SEARCH, END_RESULT, END_TOOL_CALL};

    let mut params = PolicyParams::zeros(shape.feature_dim, vocab_size, shape.window);
    let mut rng = substream(cfg.seed, 0x7072696d, 0);

    // Pretrained-junk noise over the whole table.
    for row in 0..shape.feature_dim {
        for col in 0..vocab_size {
            *params.weight_mut(row, col) = cfg.noise_sigma * gaussian(&mut rng);
        }
    }

    fn bump(params: &mut PolicyParams, gram: &[Token], target: Token, strength: f64) {
        let row = ngram_feature_index(gram, params.feature_dim()) as usize;
        *params.weight_mut(row, target.0 as usize) += strength;
    }
    let echo_range = cfg.echo_strength;
    let echo = |params: &mut PolicyParams, gram: &[Token], target: Token, rng: &mut ChaCha8Rng| {
        let (lo, hi) = echo_range;
        bump(params, gram, target, lo + (hi - lo) * uniform(rng));
    };

    let chain = schema.chain_relation;
    let skel = cfg.skeleton_strength;

    // Skeleton: a relation at the tail of the question opens a search; the
    // tier of a result's object decides between searching on and answering;
    // spans close after one content token.
    for &rel in schema.hop_relations.iter().chain([&chain]) {
        bump(&mut params, &[rel], BEGIN_SEARCH, skel);
    }
    for &m in &schema.middle_entities {
        bump(&mut params, &[m, END_RESULT], BEGIN_SEARCH, skel);
        bump(&mut params, &[BEGIN_SEARCH, m, chain], END_TOOL_CALL, skel);
    }
    for &a in &schema.answer_entities {
        bump(&mut params, &[a, END_RESULT], BEGIN_ANSWER, skel);
        bump(&mut params, &[BEGIN_ANSWER, a], protocol::END_ANSWER, skel);
    }
    for &rel in &schema.hop_relations {
        for &e in &schema.query_entities {
            bump(&mut params, &[chain, BEGIN_SEARCH, e, rel], END_TOOL_CALL, skel);
        }
    }

    // Content echoes, unevenly primed: copying question entities into
    // queries, re-querying on a middle entity, extracting the answer.
    for &m in &schema.middle_entities {
        echo(&mut params, &[m, chain, BEGIN_SEARCH], m, &mut rng);
        echo(&mut params, &[chain, BEGIN_SEARCH, m], chain, &mut rng);
        echo(&mut params, &[m, END_RESULT, BEGIN_SEARCH], m, &mut rng);
        echo(&mut params, &[END_RESULT, BEGIN_SEARCH, m], chain, &mut rng);
    }
    for &rel in &schema.hop_relations {
        for &e in &schema.query_entities {
            echo(&mut params, &[e, rel, chain, BEGIN_SEARCH], e, &mut rng);
            echo(&mut params, &[rel, chain, BEGIN_SEARCH, e], rel, &mut rng);
        }
    }
    for &a in &schema.answer_entities {
        echo(&mut params, &[a, END_RESULT, BEGIN_ANSWER], a, &mut rng);
    }

    params
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Box-Muller standard normal.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = uniform(rng).max(f64::MIN_POSITIVE);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
