//! The four-variant training-dynamics comparison.
//!
//! All variants and seeds share one generated environment and prompt split;
//! runs differ only in the algorithm variant, its variant-specific clip
//! default, and the seed. Each run writes its own metrics CSV and the
//! overlay SVG is rendered from those files afterwards.

use crate::config::RunConfig;
use crate::plot::{render_svg, PlotColumn, Series};
use anyhow::{Context, Result};
use searchrl_core::kbgen::{
    generate_kb, infer_schema, infer_vocab_size, kb_to_string, prompts_to_string, split_prompts,
    KbGenConfig,
};
use searchrl_core::metrics::{metrics_to_string, parse_metrics, trailing_average};
use searchrl_core::objectives::{AlgorithmVariant, ObjectiveConfig};
use searchrl_core::priming::primed_params;
use searchrl_core::trainer::train;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub out: PathBuf,
    pub env_seed: u64,
    /// Number of seeds per variant; run seeds are 0..n.
    pub seeds: u64,
    pub steps: usize,
    pub epochs: usize,
    pub lr: f64,
    pub feature_dim: usize,
    pub smooth_window: usize,
    /// Override the sequence-level clip half-width (experimentation knob).
    pub seq_epsilon: Option<f64>,
}

impl Default for CompareArgs {
    fn default() -> Self {
        CompareArgs {
            out: PathBuf::from("compare-out"),
            env_seed: 0,
            seeds: 1,
            steps: 400,
            epochs: 4,
            lr: 1.0,
            feature_dim: 4096,
            smooth_window: 10,
            seq_epsilon: None,
        }
    }
}

pub struct RunOutcome {
    pub variant: AlgorithmVariant,
    pub seed: u64,
    pub csv_path: PathBuf,
    /// Final trailing-average training reward, or the failure name when the
    /// run died (token-level variants can starve the filter after collapse).
    pub final_smoothed: Option<f64>,
    pub failure: Option<String>,
}

/// Runs the full grid and writes per-run CSVs plus `compare.svg`.
pub fn run_compare(args: &CompareArgs) -> Result<Vec<RunOutcome>> {
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;

    let gen = KbGenConfig {
        seed: args.env_seed,
        ..KbGenConfig::default()
    };
    let (kb, prompts) = generate_kb(&gen).context("environment generation failed")?;
    let schema = infer_schema(&kb).expect("generated worlds are layered");
    let vocab = infer_vocab_size(&kb, &prompts);
    let (train_prompts, eval_prompts) = split_prompts(&prompts, 0.2, args.env_seed);
    std::fs::write(args.out.join("kb.tsv"), kb_to_string(&kb))?;
    std::fs::write(
        args.out.join("prompts_train.tsv"),
        prompts_to_string(&train_prompts),
    )?;
    std::fs::write(
        args.out.join("prompts_eval.tsv"),
        prompts_to_string(&eval_prompts),
    )?;

    let mut outcomes = Vec::new();
    for variant in AlgorithmVariant::ALL {
        for seed in 0..args.seeds {
            let mut run = RunConfig::default();
            run.train.variant = variant;
            run.train.objective = ObjectiveConfig::for_variant(variant);
            if variant.sequence_level() {
                if let Some(eps) = args.seq_epsilon {
                    run.train.objective.clip_epsilon = eps;
                }
            }
            run.train.steps = args.steps;
            run.train.epochs = args.epochs;
            run.train.lr = args.lr;
            run.train.seed = seed;
            run.train.rollout.seed = seed;
            run.shape.feature_dim = args.feature_dim;
            run.priming.seed = seed;

            let initial = primed_params(&schema, vocab, run.shape, &run.priming);
            let csv_path = args
                .out
                .join(format!("{}_s{seed}.csv", variant.name()));
            let outcome = match train(&run.train, &kb, &train_prompts, &eval_prompts, initial) {
                Ok((_, reports)) => {
                    std::fs::write(&csv_path, metrics_to_string(&reports))?;
                    let rewards: Vec<f64> = reports.iter().map(|r| r.mean_reward).collect();
                    let smoothed = trailing_average(&rewards, args.smooth_window);
                    RunOutcome {
                        variant,
                        seed,
                        csv_path,
                        final_smoothed: smoothed.last().copied(),
                        failure: None,
                    }
                }
                Err(err) => RunOutcome {
                    variant,
                    seed,
                    csv_path,
                    final_smoothed: None,
                    failure: Some(err.to_string()),
                },
            };
            outcomes.push(outcome);
        }
    }

    let mut series = Vec::new();
    for outcome in &outcomes {
        if outcome.failure.is_some() {
            continue;
        }
        let text = std::fs::read_to_string(&outcome.csv_path)?;
        series.push(Series {
            label: format!("{}_s{}", outcome.variant.name(), outcome.seed),
            rows: parse_metrics(&text).context("re-reading run CSV")?,
        });
    }
    let svg = render_svg(&series, PlotColumn::MeanReward, args.smooth_window);
    std::fs::write(args.out.join("compare.svg"), svg)?;
    Ok(outcomes)
}

/// Per-variant median of the final smoothed rewards across seeds; runs that
/// failed score 0.
pub fn median_final(outcomes: &[RunOutcome], variant: AlgorithmVariant) -> f64 {
    let mut finals: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.variant == variant)
        .map(|o| o.final_smoothed.unwrap_or(0.0))
        .collect();
    finals.sort_by(|a, b| a.partial_cmp(b).expect("finite rewards"));
    if finals.is_empty() {
        return 0.0;
    }
    let mid = finals.len() / 2;
    if finals.len() % 2 == 1 {
        finals[mid]
    } else {
        0.5 * (finals[mid - 1] + finals[mid])
    }
}

pub fn write_summary(outcomes: &[RunOutcome], path: &Path) -> Result<()> {
    let mut text = String::from("variant,seed,final_smoothed_reward,failure\n");
    for o in outcomes {
        text.push_str(&format!(
            "{},{},{},{}\n",
            o.variant.name(),
            o.seed,
            o.final_smoothed
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default(),
            o.failure.clone().unwrap_or_default()
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}
