//! Sparse-featurized linear-softmax next-token policy with analytic
//! log-probability gradients.
//!
//! The policy scores the next token as a sum of weight rows selected by
//! hashed n-gram features of the trailing context window, followed by a
//! softmax over the vocabulary. Gradients of `log pi(y | ctx)` have the
//! closed form `(1[v = y] - softmax_v)` on every active feature row, which
//! keeps every objective in this crate exactly checkable against finite
//! differences without an autodiff dependency.

use crate::types::Token;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use thiserror::Error;

/// Multiplier for the 64-bit multiplicative feature hash (2^64 / phi).
const HASH_MULT: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of the fixed mixing function: xor-fold then multiply.
///
/// The full feature hash of an n-gram `t_1..t_n` is
/// `mix(..mix(mix(0, n), t_1 + 1).., t_n + 1)` where
/// `mix(h, x) = rot13(h ^ (x * M)) * M` with `M = 0x9E3779B97F4A7C15`,
/// mapped to a feature index as `1 + h % (F - 1)`. Index 0 is the bias.
#[inline]
fn mix(h: u64, x: u64) -> u64 {
    (h ^ x.wrapping_mul(HASH_MULT)).rotate_left(13).wrapping_mul(HASH_MULT)
}

fn ngram_hash(tokens: &[Token]) -> u64 {
    let mut h = mix(0, tokens.len() as u64);
    for t in tokens {
        h = mix(h, u64::from(t.0) + 1);
    }
    h
}

/// Shape of the feature space: hashed index count and context window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureShape {
    /// Number of feature rows F (index 0 reserved for the bias).
    pub feature_dim: usize,
    /// Number of trailing context tokens k hashed into n-grams.
    pub window: usize,
}

/// Sparse set of active feature indices for one context.
///
/// Always contains the bias index 0, plus one hashed index per n-gram
/// (n = 1..=k) over the trailing window. Stored sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextFeatures {
    indices: Vec<u32>,
}

impl ContextFeatures {
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }
}

/// Feature index of one specific n-gram, as [`featurize`] would assign it.
pub fn ngram_feature_index(gram: &[Token], feature_dim: usize) -> u32 {
    assert!(feature_dim >= 2);
    1 + (ngram_hash(gram) % (feature_dim as u64 - 1)) as u32
}

/// Deterministically featurizes the trailing `window` tokens of `context`.
///
/// Requires `feature_dim >= 2`; the bias feature 0 is always active.
pub fn featurize(context: &[Token], window: usize, feature_dim: usize) -> ContextFeatures {
    assert!(feature_dim >= 2, "feature_dim must be at least 2");
    let mut indices = vec![0u32];
    let start = context.len().saturating_sub(window);
    let tail = &context[start..];
    for n in 1..=tail.len() {
        let gram = &tail[tail.len() - n..];
        let idx = 1 + (ngram_hash(gram) % (feature_dim as u64 - 1)) as u32;
        indices.push(idx);
    }
    indices.sort_unstable();
    indices.dedup();
    ContextFeatures { indices }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("gradient contains a non-finite entry at ({row}, {col})")]
    NonFiniteGradient { row: usize, col: usize },
    #[error("checkpoint parse error at line {0}: {1}")]
    Parse(usize, String),
}

/// Live policy parameters: an F x V weight matrix over hashed context
/// features, plus the featurization shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    weights: Vec<f64>,
    feature_dim: usize,
    vocab_size: usize,
    window: usize,
}

impl PolicyParams {
    /// All-zero weights: the uniform policy.
    pub fn zeros(feature_dim: usize, vocab_size: usize, window: usize) -> PolicyParams {
        assert!(feature_dim >= 1 && vocab_size >= 2 && window >= 1);
        PolicyParams {
            weights: vec![0.0; feature_dim * vocab_size],
            feature_dim,
            vocab_size,
            window,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn shape(&self) -> FeatureShape {
        FeatureShape {
            feature_dim: self.feature_dim,
            window: self.window,
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.vocab_size + col]
    }

    pub fn weight_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        &mut self.weights[row * self.vocab_size + col]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Featurizes a context under this policy's shape.
    pub fn featurize(&self, context: &[Token]) -> ContextFeatures {
        featurize(context, self.window, self.feature_dim)
    }

    /// Log-softmax of the summed active-feature weight rows; the returned
    /// vector has length V and exponentiates to a distribution.
    pub fn log_probs(&self, features: &ContextFeatures) -> Vec<f64> {
        let v = self.vocab_size;
        let mut logits = vec![0.0f64; v];
        for &row in features.indices() {
            let base = row as usize * v;
            for (logit, w) in logits.iter_mut().zip(&self.weights[base..base + v]) {
                *logit += w;
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for l in &mut logits {
            *l -= lse;
        }
        logits
    }

    /// Draws one token from the categorical distribution at `features`.
    /// Returns the token and its exact `log_probs` entry.
    pub fn sample_token(&self, features: &ContextFeatures, rng: &mut ChaCha8Rng) -> (Token, f64) {
        let log_probs = self.log_probs(features);
        let u = uniform_f64(rng);
        let mut cum = 0.0;
        for (v, lp) in log_probs.iter().enumerate() {
            cum += lp.exp();
            if u < cum {
                return (Token(v as u32), *lp);
            }
        }
        // Floating-point tail: the cumulative sum fell fractionally short.
        let last = log_probs.len() - 1;
        (Token(last as u32), log_probs[last])
    }

    /// Token with the highest log-probability; ties resolve to the lowest id.
    pub fn argmax_token(&self, features: &ContextFeatures) -> (Token, f64) {
        let log_probs = self.log_probs(features);
        let mut best = 0usize;
        for (v, lp) in log_probs.iter().enumerate().skip(1) {
            if *lp > log_probs[best] {
                best = v;
            }
        }
        (Token(best as u32), log_probs[best])
    }

    /// Analytic gradient of `log pi(y | features)` with respect to the
    /// weights: `(1[v = y] - softmax_v)` on each active row, zero elsewhere.
    pub fn grad_log_prob(&self, features: &ContextFeatures, y: Token) -> SparseGrad {
        let log_probs = self.log_probs(features);
        let mut col_delta: Vec<f64> = log_probs.iter().map(|lp| -lp.exp()).collect();
        col_delta[y.0 as usize] += 1.0;
        SparseGrad {
            rows: features.indices().to_vec(),
            col_delta,
        }
    }

    /// Deep, immutable copy serving as pi_old or pi_ref.
    pub fn snapshot(&self, id: u64) -> PolicySnapshot {
        PolicySnapshot {
            id,
            params: self.clone(),
        }
    }

    /// One ascent step: `weights += lr * grad`. The objective is maximized.
    pub fn apply_gradient(&mut self, grad: &GradAccum, lr: f64) -> Result<(), PolicyError> {
        assert!(lr > 0.0, "learning rate must be positive");
        assert_eq!(grad.feature_dim, self.feature_dim);
        assert_eq!(grad.vocab_size, self.vocab_size);
        if let Some(flat) = grad.data.iter().position(|g| !g.is_finite()) {
            return Err(PolicyError::NonFiniteGradient {
                row: flat / self.vocab_size,
                col: flat % self.vocab_size,
            });
        }
        for (w, g) in self.weights.iter_mut().zip(&grad.data) {
            *w += lr * g;
        }
        Ok(())
    }

    /// Writes the checkpoint format: a `F=..\tV=..\tk=..` header, then the
    /// row-major weights as decimal text, one row per line.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "F={}\tV={}\tk={}",
            self.feature_dim, self.vocab_size, self.window
        );
        for row in 0..self.feature_dim {
            let base = row * self.vocab_size;
            for (col, w) in self.weights[base..base + self.vocab_size].iter().enumerate() {
                if col > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{w}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<PolicyParams, PolicyError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| PolicyError::Parse(0, "empty checkpoint".into()))?;
        let mut f = None;
        let mut v = None;
        let mut k = None;
        for field in header.split('\t') {
            let (key, val) = field
                .split_once('=')
                .ok_or_else(|| PolicyError::Parse(1, format!("bad header field {field:?}")))?;
            let n: usize = val
                .parse()
                .map_err(|_| PolicyError::Parse(1, format!("bad header value {val:?}")))?;
            match key {
                "F" => f = Some(n),
                "V" => v = Some(n),
                "k" => k = Some(n),
                _ => return Err(PolicyError::Parse(1, format!("unknown header key {key:?}"))),
            }
        }
        let (feature_dim, vocab_size, window) = match (f, v, k) {
            (Some(f), Some(v), Some(k)) if f >= 1 && v >= 2 && k >= 1 => (f, v, k),
            _ => return Err(PolicyError::Parse(1, "incomplete or invalid header".into())),
        };
        let mut weights = Vec::with_capacity(feature_dim * vocab_size);
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            for field in line.split(' ') {
                let w: f64 = field.parse().map_err(|_| {
                    PolicyError::Parse(lineno + 2, format!("bad weight {field:?}"))
                })?;
                if !w.is_finite() {
                    return Err(PolicyError::Parse(lineno + 2, "non-finite weight".into()));
                }
                weights.push(w);
            }
        }
        if weights.len() != feature_dim * vocab_size {
            return Err(PolicyError::Parse(
                0,
                format!(
                    "expected {} weights, found {}",
                    feature_dim * vocab_size,
                    weights.len()
                ),
            ));
        }
        Ok(PolicyParams {
            weights,
            feature_dim,
            vocab_size,
            window,
        })
    }
}

/// Immutable frozen copy of the policy, used as pi_old and pi_ref.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    id: u64,
    params: PolicyParams,
}

impl PolicySnapshot {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn log_probs(&self, features: &ContextFeatures) -> Vec<f64> {
        self.params.log_probs(features)
    }
}

/// Gradient of one token's log-probability: a shared column delta applied to
/// every active feature row.
#[derive(Debug, Clone)]
pub struct SparseGrad {
    pub rows: Vec<u32>,
    pub col_delta: Vec<f64>,
}

/// Dense F x V gradient accumulation buffer.
#[derive(Debug, Clone)]
pub struct GradAccum {
    data: Vec<f64>,
    feature_dim: usize,
    vocab_size: usize,
}

impl GradAccum {
    pub fn zeros(feature_dim: usize, vocab_size: usize) -> GradAccum {
        GradAccum {
            data: vec![0.0; feature_dim * vocab_size],
            feature_dim,
            vocab_size,
        }
    }

    pub fn zeros_like(params: &PolicyParams) -> GradAccum {
        GradAccum::zeros(params.feature_dim(), params.vocab_size())
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.vocab_size + col]
    }

    pub fn entry_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        &mut self.data[row * self.vocab_size + col]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Accumulates `coef * (1[v = y] - probs[v])` into every active row:
    /// the scaled gradient of one token's log-probability.
    pub fn add_log_prob_grad(
        &mut self,
        features: &ContextFeatures,
        probs: &[f64],
        y: Token,
        coef: f64,
    ) {
        debug_assert_eq!(probs.len(), self.vocab_size);
        let v = self.vocab_size;
        for &row in features.indices() {
            let base = row as usize * v;
            for (col, p) in probs.iter().enumerate() {
                let indicator = if col == y.0 as usize { 1.0 } else { 0.0 };
                self.data[base + col] += coef * (indicator - p);
            }
        }
    }

    /// Accumulates the scaled gradient of `KL(pi_theta(.|ctx) || pi_ref(.|ctx))`
    /// with respect to the live logits: `p_v * (log p_v - log q_v - kl)` on
    /// every active row.
    pub fn add_kl_grad(
        &mut self,
        features: &ContextFeatures,
        live_log_probs: &[f64],
        ref_log_probs: &[f64],
        coef: f64,
    ) {
        let v = self.vocab_size;
        let mut kl = 0.0;
        for (lp, lq) in live_log_probs.iter().zip(ref_log_probs) {
            kl += lp.exp() * (lp - lq);
        }
        for &row in features.indices() {
            let base = row as usize * v;
            for (col, (lp, lq)) in live_log_probs.iter().zip(ref_log_probs).enumerate() {
                self.data[base + col] += coef * lp.exp() * ((lp - lq) - kl);
            }
        }
    }

    pub fn add_assign(&mut self, other: &GradAccum) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.data {
            *g *= factor;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }
}

/// Uniform draw in [0, 1) with 53 random bits, stable across platforms.
fn uniform_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic substream derivation: a ChaCha8 stream keyed by mixing the
/// base seed with up to two lane identifiers.
pub fn substream(base: u64, lane_a: u64, lane_b: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    let words = [
        mix(mix(mix(1, base), lane_a), lane_b),
        mix(mix(mix(2, base), lane_a), lane_b),
        mix(mix(mix(3, base), lane_a), lane_b),
        mix(mix(mix(4, base), lane_a), lane_b),
    ];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngCore;

    fn toks(ids: &[u32]) -> Vec<Token> {
        ids.iter().map(|&i| Token(i)).collect()
    }

    #[test]
    fn empty_context_is_bias_only() {
        let f = featurize(&[], 4, 64);
        assert_eq!(f.indices(), &[0]);
    }

    #[test]
    fn featurize_is_deterministic() {
        let ctx = toks(&[3, 1, 4, 1, 5]);
        assert_eq!(featurize(&ctx, 3, 128), featurize(&ctx, 3, 128));
    }

    #[test]
    fn last_token_changes_some_unigram_index() {
        // Independent re-statement of the documented hash: for F = 1024 the
        // unigram indices of tokens 7 and 8 must land on different rows.
        let m = 0x9E37_79B9_7F4A_7C15u64;
        let mixref = |h: u64, x: u64| (h ^ x.wrapping_mul(m)).rotate_left(13).wrapping_mul(m);
        let uni = |t: u64| 1 + (mixref(mixref(0, 1), t + 1) % 1023) as u32;
        assert_ne!(uni(7), uni(8));

        let a = featurize(&toks(&[2, 7]), 2, 1024);
        let b = featurize(&toks(&[2, 8]), 2, 1024);
        assert!(a.indices().contains(&uni(7)));
        assert!(b.indices().contains(&uni(8)));
        assert_ne!(a, b);
    }

    #[test]
    fn window_limits_ngrams() {
        // Window 2 over a long context: bias + unigram + bigram at most.
        let f = featurize(&toks(&[9, 9, 9, 9, 9, 1, 2]), 2, 4096);
        assert!(f.indices().len() <= 3);
        assert_eq!(f.indices()[0], 0);
    }

    #[test]
    fn zero_weights_are_uniform() {
        let p = PolicyParams::zeros(16, 5, 2);
        let lp = p.log_probs(&p.featurize(&toks(&[1])));
        let expect = -(5.0f64).ln();
        for l in lp {
            assert!((l - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_one_column_shifts_mass() {
        let mut p = PolicyParams::zeros(16, 4, 2);
        let feats = p.featurize(&toks(&[2, 3]));
        let before = p.log_probs(&feats);
        for &row in feats.indices() {
            *p.weight_mut(row as usize, 1) += 0.7;
        }
        let after = p.log_probs(&feats);
        assert!(after[1] > before[1]);
        for v in [0usize, 2, 3] {
            assert!(after[v] < before[v]);
        }
        let total: f64 = after.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn random_weights_normalize() {
        let mut rng = substream(11, 0, 0);
        let mut p = PolicyParams::zeros(8, 5, 2);
        for row in 0..8 {
            for col in 0..5 {
                *p.weight_mut(row, col) = uniform_f64(&mut rng) * 4.0 - 2.0;
            }
        }
        let feats = p.featurize(&toks(&[4, 2]));
        let sum: f64 = p.log_probs(&feats).iter().map(|l| l.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_probs_shift_invariant() {
        let mut rng = substream(13, 0, 0);
        let mut p = PolicyParams::zeros(8, 6, 2);
        for row in 0..8 {
            for col in 0..6 {
                *p.weight_mut(row, col) = uniform_f64(&mut rng) * 2.0 - 1.0;
            }
        }
        let feats = p.featurize(&toks(&[1, 2]));
        let before = p.log_probs(&feats);
        // Adding a constant to every logit means adding c to every column of
        // one active row.
        let row = feats.indices()[1] as usize;
        let mut shifted = p.clone();
        for col in 0..6 {
            *shifted.weight_mut(row, col) += 3.21;
        }
        let after = shifted.log_probs(&feats);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_logit_dominates_sampling() {
        let mut p = PolicyParams::zeros(8, 4, 1);
        let feats = p.featurize(&toks(&[1]));
        for &row in feats.indices() {
            *p.weight_mut(row as usize, 2) += 20.0;
        }
        let mut rng = substream(5, 0, 0);
        let hits = (0..100_000)
            .filter(|_| p.sample_token(&feats, &mut rng).0 == Token(2))
            .count();
        assert!(hits as f64 / 1e5 > 0.999);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let p = PolicyParams::zeros(8, 4, 1);
        let feats = p.featurize(&toks(&[1]));
        let mut rng = substream(7, 0, 0);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[p.sample_token(&feats, &mut rng).0 .0 as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let p = PolicyParams::zeros(8, 9, 2);
        let feats = p.featurize(&toks(&[3, 4]));
        let draw = |seed| {
            let mut rng = substream(seed, 1, 2);
            (0..64).map(|_| p.sample_token(&feats, &mut rng).0 .0).collect::<Vec<_>>()
        };
        assert_eq!(draw(99), draw(99));
        assert_ne!(draw(99), draw(100));
    }

    #[test]
    fn sampled_log_prob_matches_log_probs() {
        let mut p = PolicyParams::zeros(8, 5, 2);
        *p.weight_mut(0, 3) = 1.5;
        let feats = p.featurize(&toks(&[2, 2]));
        let lp = p.log_probs(&feats);
        let mut rng = substream(3, 0, 0);
        for _ in 0..100 {
            let (tok, tok_lp) = p.sample_token(&feats, &mut rng);
            assert_eq!(tok_lp, lp[tok.0 as usize]);
        }
    }

    #[test]
    fn grad_uniform_two_tokens() {
        let p = PolicyParams::zeros(8, 2, 1);
        let feats = p.featurize(&toks(&[1]));
        let g = p.grad_log_prob(&feats, Token(0));
        assert_eq!(g.rows, feats.indices());
        assert!((g.col_delta[0] - 0.5).abs() < 1e-12);
        assert!((g.col_delta[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn grad_columns_sum_to_zero() {
        let mut rng = substream(17, 0, 0);
        let mut p = PolicyParams::zeros(16, 7, 3);
        for row in 0..16 {
            for col in 0..7 {
                *p.weight_mut(row, col) = uniform_f64(&mut rng) * 6.0 - 3.0;
            }
        }
        let feats = p.featurize(&toks(&[1, 2, 3]));
        let g = p.grad_log_prob(&feats, Token(4));
        let sum: f64 = g.col_delta.iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    fn central_diff_log_prob(
        p: &PolicyParams,
        feats: &ContextFeatures,
        y: Token,
        row: usize,
        col: usize,
        h: f64,
    ) -> f64 {
        let mut plus = p.clone();
        *plus.weight_mut(row, col) += h;
        let mut minus = p.clone();
        *minus.weight_mut(row, col) -= h;
        (plus.log_probs(feats)[y.0 as usize] - minus.log_probs(feats)[y.0 as usize]) / (2.0 * h)
    }

    #[test]
    fn grad_matches_finite_differences() {
        // 100 random (params, context, token) triples.
        for trial in 0..100u64 {
            let mut rng = substream(1000 + trial, 0, 0);
            let f_dim = 8 + (rng.next_u64() % 9) as usize;
            let v = 2 + (rng.next_u64() % 5) as usize;
            let mut p = PolicyParams::zeros(f_dim, v, 3);
            for row in 0..f_dim {
                for col in 0..v {
                    *p.weight_mut(row, col) = uniform_f64(&mut rng) * 4.0 - 2.0;
                }
            }
            let ctx: Vec<Token> = (0..(rng.next_u64() % 5))
                .map(|_| Token((rng.next_u64() % v as u64) as u32))
                .collect();
            let feats = p.featurize(&ctx);
            let y = Token((rng.next_u64() % v as u64) as u32);
            let analytic = p.grad_log_prob(&feats, y);

            for &row in analytic.rows.iter() {
                for col in 0..v {
                    let numeric =
                        central_diff_log_prob(&p, &feats, y, row as usize, col, 1e-5);
                    let a = analytic.col_delta[col];
                    let denom = a.abs().max(numeric.abs()).max(1e-7);
                    assert!(
                        (a - numeric).abs() / denom <= 1e-4,
                        "trial {trial} row {row} col {col}: {a} vs {numeric}"
                    );
                }
            }
            // A row that is inactive must have zero gradient; probe one.
            let inactive = (0..f_dim as u32).find(|r| !analytic.rows.contains(r));
            if let Some(row) = inactive {
                for col in 0..v {
                    let numeric = central_diff_log_prob(&p, &feats, y, row as usize, col, 1e-5);
                    assert!(numeric.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn snapshot_is_isolated_from_updates() {
        let mut p = PolicyParams::zeros(8, 4, 2);
        let snap = p.snapshot(1);
        let snap2 = p.snapshot(2);
        assert_eq!(snap.params(), snap2.params());

        let feats = p.featurize(&toks(&[1, 2]));
        let before = snap.log_probs(&feats);
        let mut g = GradAccum::zeros_like(&p);
        *g.entry_mut(0, 1) = 0.1;
        p.apply_gradient(&g, 1.0).unwrap();
        assert_eq!(snap.log_probs(&feats), before);
        assert_ne!(p.log_probs(&feats), before);
    }

    #[test]
    fn apply_gradient_contract() {
        let mut p = PolicyParams::zeros(4, 3, 1);
        let zero = GradAccum::zeros_like(&p);
        let orig = p.clone();
        p.apply_gradient(&zero, 0.5).unwrap();
        assert_eq!(p, orig);

        let mut g = GradAccum::zeros_like(&p);
        *g.entry_mut(2, 1) = 0.1;
        p.apply_gradient(&g, 1.0).unwrap();
        assert_eq!(p.weight(2, 1), 0.1);

        *g.entry_mut(0, 0) = f64::NAN;
        assert!(matches!(
            p.apply_gradient(&g, 1.0),
            Err(PolicyError::NonFiniteGradient { row: 0, col: 0 })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = substream(23, 0, 0);
        let mut p = PolicyParams::zeros(6, 4, 2);
        for row in 0..6 {
            for col in 0..4 {
                *p.weight_mut(row, col) = uniform_f64(&mut rng) * 10.0 - 5.0;
            }
        }
        let text = p.to_checkpoint();
        assert!(text.starts_with("F=6\tV=4\tk=2\n"));
        let back = PolicyParams::from_checkpoint(&text).unwrap();
        assert_eq!(p, back);
    }

    proptest! {
        #[test]
        fn featurize_always_has_bias(ctx in prop::collection::vec(0u32..100, 0..12), window in 1usize..6, f_dim in 2usize..512) {
            let ctx = toks(&ctx);
            let feats = featurize(&ctx, window, f_dim);
            prop_assert_eq!(feats.indices()[0], 0);
            prop_assert!(feats.indices().iter().all(|&i| (i as usize) < f_dim));
        }
    }
}
