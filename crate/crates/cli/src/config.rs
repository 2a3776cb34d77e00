//! Flat `key=value` config files with dotted keys.
//!
//! Every key has a default; unknown keys are an error so typos fail loudly.
//! Blank lines and `#` comments are allowed.

use anyhow::{anyhow, bail, Context, Result};
use searchrl_core::objectives::{AlgorithmVariant, ObjectiveConfig};
use searchrl_core::policy::FeatureShape;
use searchrl_core::priming::PrimingConfig;
use searchrl_core::rollout::RolloutConfig;
use searchrl_core::trainer::TrainConfig;
use std::collections::BTreeMap;
use std::path::Path;

/// How the initial policy is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Protocol-primed weights derived from the KB schema (the default).
    Primed,
    /// All-zero weights: the uniform policy.
    Zero,
}

/// Fully resolved run settings: the trainer config plus policy construction.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub shape: FeatureShape,
    pub init: InitKind,
    pub priming: PrimingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let variant = AlgorithmVariant::Dspo;
        RunConfig {
            train: TrainConfig::new(variant),
            shape: FeatureShape {
                feature_dim: 4096,
                window: 4,
            },
            init: InitKind::Primed,
            priming: PrimingConfig::default(),
        }
    }
}

/// Every supported key with its documented default, for `--help` and the
/// README. Defaults marked `(variant)` or `(derived)` depend on other keys.
pub const KEY_DOCS: &[(&str, &str, &str)] = &[
    ("variant", "dspo", "one of token_grpo, token_filtered, seq_unfiltered, dspo"),
    ("steps", "500", "training steps"),
    ("batch_size", "8", "accepted groups per buffer (B)"),
    ("lr", "0.8", "ascent step size; 0 freezes the policy"),
    ("epochs", "1", "gradient updates per filled buffer"),
    ("grad_clip_norm", "none", "rescale gradients above this L2 norm"),
    ("eval_every", "10", "evaluate and checkpoint every N steps"),
    ("seed", "0", "master seed for sampling and priming"),
    ("max_attempts", "50*batch_size", "group-sample cap per buffer"),
    ("record_wall_time", "false", "measure wall_ms per step (breaks run-to-run byte identity)"),
    ("objective.clip_epsilon", "(variant)", "clip half-width; 0.2 token-level, 0.05 sequence-level"),
    ("objective.kl_beta", "0", "KL penalty weight against the initial policy"),
    ("objective.advantage_delta", "1e-8", "stability constant under the reward std"),
    ("rollout.group_size", "4", "trajectories per group (G)"),
    ("rollout.max_turns", "4", "tool calls per episode"),
    ("rollout.max_action_tokens", "32", "agent tokens per action"),
    ("rollout.max_total_agent_tokens", "48", "agent tokens per episode"),
    ("rollout.seed", "(seed)", "substream offset for rollout sampling"),
    ("policy.feature_dim", "4096", "hashed feature rows (F)"),
    ("policy.window", "4", "trailing context tokens hashed (k)"),
    ("policy.init", "primed", "primed or zero"),
    ("priming.skeleton_strength", "12", "protocol-transition weight"),
    ("priming.echo_lo", "4", "content-transition weight, lower bound"),
    ("priming.echo_hi", "9", "content-transition weight, upper bound"),
    ("priming.noise_sigma", "0.5", "initialization noise std"),
];

pub fn parse_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig> {
    let mut pairs = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value", lineno + 1))?;
        let key = key.trim().to_string();
        if pairs.insert(key.clone(), value.trim().to_string()).is_some() {
            bail!("config line {}: duplicate key {key:?}", lineno + 1);
        }
    }
    from_pairs(pairs)
}

fn from_pairs(mut pairs: BTreeMap<String, String>) -> Result<RunConfig> {
    let mut take = |key: &str| pairs.remove(key);

    let variant = match take("variant") {
        Some(v) => AlgorithmVariant::parse(&v)
            .ok_or_else(|| anyhow!("unknown variant {v:?} (see --help for the list)"))?,
        None => AlgorithmVariant::Dspo,
    };

    let mut cfg = RunConfig {
        train: TrainConfig::new(variant),
        ..RunConfig::default()
    };
    cfg.train.objective = ObjectiveConfig::for_variant(variant);

    let parse_num = |key: &str, v: &str| -> Result<f64> {
        v.parse::<f64>()
            .map_err(|_| anyhow!("config key {key}: bad number {v:?}"))
    };
    let parse_int = |key: &str, v: &str| -> Result<u64> {
        v.parse::<u64>()
            .map_err(|_| anyhow!("config key {key}: bad integer {v:?}"))
    };
    let parse_bool = |key: &str, v: &str| -> Result<bool> {
        match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => bail!("config key {key}: expected true or false, got {v:?}"),
        }
    };

    if let Some(v) = take("steps") {
        cfg.train.steps = parse_int("steps", &v)? as usize;
    }
    if let Some(v) = take("batch_size") {
        cfg.train.batch_size = parse_int("batch_size", &v)? as usize;
    }
    if let Some(v) = take("lr") {
        cfg.train.lr = parse_num("lr", &v)?;
    }
    if let Some(v) = take("epochs") {
        cfg.train.epochs = parse_int("epochs", &v)? as usize;
    }
    if let Some(v) = take("grad_clip_norm") {
        cfg.train.grad_clip_norm = match v.as_str() {
            "none" => None,
            _ => Some(parse_num("grad_clip_norm", &v)?),
        };
    }
    if let Some(v) = take("eval_every") {
        cfg.train.eval_every = parse_int("eval_every", &v)? as usize;
    }
    let mut seed_from_file = None;
    if let Some(v) = take("seed") {
        let s = parse_int("seed", &v)?;
        seed_from_file = Some(s);
        cfg.train.seed = s;
    }
    if let Some(v) = take("max_attempts") {
        cfg.train.max_attempts = Some(parse_int("max_attempts", &v)? as usize);
    }
    if let Some(v) = take("record_wall_time") {
        cfg.train.record_wall_time = parse_bool("record_wall_time", &v)?;
    }

    if let Some(v) = take("objective.clip_epsilon") {
        cfg.train.objective.clip_epsilon = parse_num("objective.clip_epsilon", &v)?;
    }
    if let Some(v) = take("objective.kl_beta") {
        cfg.train.objective.kl_beta = parse_num("objective.kl_beta", &v)?;
    }
    if let Some(v) = take("objective.advantage_delta") {
        cfg.train.objective.advantage_delta = parse_num("objective.advantage_delta", &v)?;
    }

    let mut rollout = RolloutConfig::default();
    if let Some(v) = take("rollout.group_size") {
        rollout.group_size = parse_int("rollout.group_size", &v)? as usize;
    }
    if let Some(v) = take("rollout.max_turns") {
        rollout.max_turns = parse_int("rollout.max_turns", &v)? as usize;
    }
    if let Some(v) = take("rollout.max_action_tokens") {
        rollout.max_action_tokens = parse_int("rollout.max_action_tokens", &v)? as usize;
    }
    if let Some(v) = take("rollout.max_total_agent_tokens") {
        rollout.max_total_agent_tokens = parse_int("rollout.max_total_agent_tokens", &v)? as usize;
    }
    rollout.seed = match take("rollout.seed") {
        Some(v) => parse_int("rollout.seed", &v)?,
        None => seed_from_file.unwrap_or(cfg.train.seed),
    };
    cfg.train.rollout = rollout;

    if let Some(v) = take("policy.feature_dim") {
        cfg.shape.feature_dim = parse_int("policy.feature_dim", &v)? as usize;
    }
    if let Some(v) = take("policy.window") {
        cfg.shape.window = parse_int("policy.window", &v)? as usize;
    }
    if let Some(v) = take("policy.init") {
        cfg.init = match v.as_str() {
            "primed" => InitKind::Primed,
            "zero" => InitKind::Zero,
            _ => bail!("config key policy.init: expected primed or zero, got {v:?}"),
        };
    }
    if let Some(v) = take("priming.skeleton_strength") {
        cfg.priming.skeleton_strength = parse_num("priming.skeleton_strength", &v)?;
    }
    let mut echo = cfg.priming.echo_strength;
    if let Some(v) = take("priming.echo_lo") {
        echo.0 = parse_num("priming.echo_lo", &v)?;
    }
    if let Some(v) = take("priming.echo_hi") {
        echo.1 = parse_num("priming.echo_hi", &v)?;
    }
    cfg.priming.echo_strength = echo;
    if let Some(v) = take("priming.noise_sigma") {
        cfg.priming.noise_sigma = parse_num("priming.noise_sigma", &v)?;
    }
    // The priming stream follows the master seed so each seeded run gets its
    // own imperfect initialization.
    cfg.priming.seed = cfg.train.seed;

    if let Some(unknown) = pairs.keys().next() {
        bail!("unknown config key {unknown:?}");
    }
    Ok(cfg)
}
