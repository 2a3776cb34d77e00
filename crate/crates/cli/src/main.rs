//! Command-line harness: environment generation, training, evaluation, the
//! four-variant comparison experiment, and SVG plotting.

mod compare;
mod config;
mod plot;

use anyhow::{anyhow, Context, Result};
use compare::{median_final, run_compare, write_summary, CompareArgs};
use config::{InitKind, RunConfig};
use plot::{render_svg, PlotColumn, Series};
use searchrl_core::kbgen::{
    generate_kb, infer_schema, infer_vocab_size, kb_from_string, kb_to_string,
    prompts_from_string, prompts_to_string, split_prompts, HopsMix, KbGenConfig,
};
use searchrl_core::metrics::{parse_metrics, write_metrics};
use searchrl_core::objectives::AlgorithmVariant;
use searchrl_core::policy::PolicyParams;
use searchrl_core::priming::primed_params;
use searchrl_core::trainer::{evaluate, train_with_observer, StepReport, TrainObserver};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const USAGE: &str = "\
usage: searchrl <command> [flags]

commands:
  gen-env   write a generated knowledge base and prompt files
            --out DIR [--seed N] [--entities N] [--relations N] [--filler N]
            [--top-k N] [--hops 1|2|mixed] [--eval-fraction F]
  train     train one configuration and write metrics + checkpoints
            --kb FILE --prompts FILE --out DIR
            [--config FILE] [--eval-prompts FILE]
  eval      greedy-decode a checkpoint against a prompt file
            --checkpoint FILE --kb FILE --prompts FILE
  compare   run all four variants on one shared environment
            --out DIR [--env-seed N] [--seeds N] [--steps N] [--epochs N]
            [--lr F] [--window N]
  plot      render metrics CSVs to an SVG curve overlay
            --out FILE.svg [--window N] [--column mean_reward|eval_reward]
            CSV [CSV ...]

Config files are flat key=value lines; run `searchrl train --help-config`
for the full key list and defaults. Exit codes: 0 success, 1 training
failure, 2 usage or input errors.
";

/// Usage-class problems exit 2; runtime failures exit 1.
enum CliError {
    Usage(String),
    Run(anyhow::Error),
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let code = match dispatch(&args) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("{msg}\n");
            eprint!("{USAGE}");
            2
        }
        Err(CliError::Run(err)) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(command) = args.first() else {
        return Err(CliError::Usage("missing command".into()));
    };
    match command.as_str() {
        "gen-env" => cmd_gen_env(&args[1..]),
        "train" => cmd_train(&args[1..]),
        "eval" => cmd_eval(&args[1..]),
        "compare" => cmd_compare(&args[1..]),
        "plot" => cmd_plot(&args[1..]),
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
}

/// `--key value` and `--key=value` flags plus positional arguments.
struct Flags {
    values: BTreeMap<String, String>,
    positional: Vec<String>,
}

impl Flags {
    fn parse(args: &[String], allowed: &[&str], positional_ok: bool) -> Result<Flags, CliError> {
        let mut values = BTreeMap::new();
        let mut positional = Vec::new();
        let mut iter = args.iter().peekable();
        while let Some(arg) = iter.next() {
            if let Some(stripped) = arg.strip_prefix("--") {
                let (key, inline) = match stripped.split_once('=') {
                    Some((k, v)) => (k.to_string(), Some(v.to_string())),
                    None => (stripped.to_string(), None),
                };
                if !allowed.contains(&key.as_str()) {
                    return Err(CliError::Usage(format!("unknown flag --{key}")));
                }
                let value = match inline {
                    Some(v) => v,
                    None => iter
                        .next()
                        .ok_or_else(|| CliError::Usage(format!("flag --{key} needs a value")))?
                        .clone(),
                };
                if values.insert(key.clone(), value).is_some() {
                    return Err(CliError::Usage(format!("flag --{key} given twice")));
                }
            } else if positional_ok {
                positional.push(arg.clone());
            } else {
                return Err(CliError::Usage(format!("unexpected argument {arg:?}")));
            }
        }
        Ok(Flags { values, positional })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn required(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Usage(format!("missing required flag --{key}")))
    }

    fn int(&self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("flag --{key}: bad integer {v:?}"))),
        }
    }

    fn num(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("flag --{key}: bad number {v:?}"))),
        }
    }
}

fn usage_err<T>(result: Result<T>) -> Result<T, CliError> {
    result.map_err(|e| CliError::Usage(format!("{e:#}")))
}

fn run_err<T>(result: Result<T>) -> Result<T, CliError> {
    result.map_err(CliError::Run)
}

fn cmd_gen_env(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(
        args,
        &[
            "out",
            "seed",
            "entities",
            "relations",
            "filler",
            "top-k",
            "hops",
            "eval-fraction",
        ],
        false,
    )?;
    let out = PathBuf::from(flags.required("out")?);
    let hops = match flags.get("hops").unwrap_or("mixed") {
        "1" => HopsMix::OneHopOnly,
        "2" => HopsMix::TwoHopOnly,
        "mixed" => HopsMix::Mixed,
        other => {
            return Err(CliError::Usage(format!(
                "flag --hops: expected 1, 2 or mixed, got {other:?}"
            )))
        }
    };
    let gen = KbGenConfig {
        seed: flags.int("seed", 0)?,
        n_entities: flags.int("entities", 30)? as usize,
        n_relations: flags.int("relations", 4)? as usize,
        n_filler: flags.int("filler", 20)? as usize,
        hops_mix: hops,
        top_k: flags.int("top-k", 1)? as usize,
    };
    let eval_fraction = flags.num("eval-fraction", 0.2)?;

    let (kb, prompts) = usage_err(generate_kb(&gen).map_err(Into::into))?;
    let (train_prompts, eval_prompts) = split_prompts(&prompts, eval_fraction, gen.seed);
    run_err((|| -> Result<()> {
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("kb.tsv"), kb_to_string(&kb))?;
        std::fs::write(out.join("prompts_train.tsv"), prompts_to_string(&train_prompts))?;
        std::fs::write(out.join("prompts_eval.tsv"), prompts_to_string(&eval_prompts))?;
        Ok(())
    })())?;
    println!(
        "wrote {}: facts={} vocab={} prompts={} (train={} eval={})",
        out.display(),
        kb.facts.len(),
        infer_vocab_size(&kb, &prompts),
        prompts.len(),
        train_prompts.len(),
        eval_prompts.len()
    );
    Ok(())
}

fn load_kb_and_prompts(
    kb_path: &Path,
    prompts_path: &Path,
    top_k: usize,
) -> Result<(searchrl_core::KnowledgeBase, Vec<searchrl_core::Prompt>)> {
    let kb_text = std::fs::read_to_string(kb_path)
        .with_context(|| format!("cannot read KB file {}", kb_path.display()))?;
    let kb = kb_from_string(&kb_text, top_k)?;
    let prompts_text = std::fs::read_to_string(prompts_path)
        .with_context(|| format!("cannot read prompts file {}", prompts_path.display()))?;
    let prompts = prompts_from_string(&prompts_text)?;
    if prompts.is_empty() {
        return Err(anyhow!("prompts file {} is empty", prompts_path.display()));
    }
    Ok((kb, prompts))
}

/// Writes checkpoints and progress lines during training.
struct RunObserver {
    out: PathBuf,
    eval_every: usize,
}

impl TrainObserver for RunObserver {
    fn on_step(&mut self, report: &StepReport) -> Result<(), String> {
        if report.step.is_multiple_of(self.eval_every) {
            eprintln!(
                "step {:>5}  reward {:.3}  objective {:+.4}  accepted {}/{}  eval {}",
                report.step,
                report.mean_reward,
                report.objective,
                report.filter.groups_accepted,
                report.filter.groups_sampled,
                report
                    .eval_reward
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into()),
            );
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, step: usize, params: &PolicyParams) -> Result<(), String> {
        let path = self.out.join(format!("ckpt_{step}.txt"));
        std::fs::write(&path, params.to_checkpoint())
            .map_err(|e| format!("writing checkpoint {}: {e}", path.display()))
    }
}

fn build_initial_params(
    run: &RunConfig,
    kb: &searchrl_core::KnowledgeBase,
    vocab: usize,
) -> Result<PolicyParams> {
    match run.init {
        InitKind::Zero => Ok(PolicyParams::zeros(
            run.shape.feature_dim,
            vocab,
            run.shape.window,
        )),
        InitKind::Primed => {
            let schema = infer_schema(kb).ok_or_else(|| {
                anyhow!(
                    "this KB does not have the layered single-token shape needed for \
                     primed initialization; set policy.init=zero"
                )
            })?;
            Ok(primed_params(&schema, vocab, run.shape, &run.priming))
        }
    }
}

fn cmd_train(args: &[String]) -> Result<(), CliError> {
    if args.iter().any(|a| a == "--help-config") {
        println!("config keys (key = default  # description):");
        for (key, default, doc) in config::KEY_DOCS {
            println!("  {key} = {default}  # {doc}");
        }
        return Ok(());
    }
    let flags = Flags::parse(
        args,
        &["config", "kb", "prompts", "eval-prompts", "out"],
        false,
    )?;
    let out = PathBuf::from(flags.required("out")?);
    let run = match flags.get("config") {
        Some(path) => usage_err(config::parse_file(Path::new(path)))?,
        None => RunConfig::default(),
    };
    let kb_path = PathBuf::from(flags.required("kb")?);
    let prompts_path = PathBuf::from(flags.required("prompts")?);
    let (kb, train_prompts) = usage_err(load_kb_and_prompts(&kb_path, &prompts_path, 1))?;
    let eval_prompts = match flags.get("eval-prompts") {
        Some(path) => {
            let text = usage_err(
                std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read eval prompts file {path}")),
            )?;
            usage_err(prompts_from_string(&text).map_err(Into::into))?
        }
        None => Vec::new(),
    };

    let mut all_prompts = train_prompts.clone();
    all_prompts.extend(eval_prompts.iter().cloned());
    let vocab = infer_vocab_size(&kb, &all_prompts);
    let initial = usage_err(build_initial_params(&run, &kb, vocab))?;

    run_err(
        std::fs::create_dir_all(&out)
            .with_context(|| format!("cannot create {}", out.display())),
    )?;
    let mut observer = RunObserver {
        out: out.clone(),
        eval_every: run.train.eval_every,
    };
    let (finals, reports) = run_err(
        train_with_observer(
            &run.train,
            &kb,
            &train_prompts,
            &eval_prompts,
            initial,
            &mut observer,
        )
        .map_err(Into::into),
    )?;
    run_err((|| -> Result<()> {
        std::fs::write(out.join("final.txt"), finals.to_checkpoint())?;
        write_metrics(&reports, &out.join("metrics.csv"))?;
        Ok(())
    })())?;
    let last = reports.last().expect("steps >= 1");
    println!(
        "done: {} steps, final reward {:.3}, metrics at {}",
        reports.len(),
        last.mean_reward,
        out.join("metrics.csv").display()
    );
    Ok(())
}

fn cmd_eval(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["checkpoint", "kb", "prompts"], false)?;
    let ckpt_path = flags.required("checkpoint")?;
    let text = usage_err(
        std::fs::read_to_string(ckpt_path)
            .with_context(|| format!("cannot read checkpoint {ckpt_path}")),
    )?;
    let params = usage_err(PolicyParams::from_checkpoint(&text).map_err(Into::into))?;
    let (kb, prompts) = usage_err(load_kb_and_prompts(
        Path::new(flags.required("kb")?),
        Path::new(flags.required("prompts")?),
        1,
    ))?;
    let reward = evaluate(
        &params,
        &prompts,
        &kb,
        &searchrl_core::rollout::RolloutConfig::default(),
    );
    println!("mean_reward={reward:.6}");
    Ok(())
}

fn cmd_compare(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(
        args,
        &["out", "env-seed", "seeds", "steps", "epochs", "lr", "feature-dim", "window", "seq-epsilon"],
        false,
    )?;
    let defaults = CompareArgs::default();
    let compare_args = CompareArgs {
        out: PathBuf::from(flags.required("out")?),
        env_seed: flags.int("env-seed", defaults.env_seed)?,
        seeds: flags.int("seeds", defaults.seeds)?.max(1),
        steps: flags.int("steps", defaults.steps as u64)? as usize,
        epochs: flags.int("epochs", defaults.epochs as u64)? as usize,
        lr: flags.num("lr", defaults.lr)?,
        feature_dim: flags.int("feature-dim", defaults.feature_dim as u64)? as usize,
        smooth_window: flags.int("window", defaults.smooth_window as u64)? as usize,
        seq_epsilon: match flags.get("seq-epsilon") {
            None => None,
            Some(v) => Some(v.parse().map_err(|_| {
                CliError::Usage(format!("flag --seq-epsilon: bad number {v:?}"))
            })?),
        },
    };
    let outcomes = run_err(run_compare(&compare_args))?;
    run_err(write_summary(
        &outcomes,
        &compare_args.out.join("summary.csv"),
    ))?;
    for outcome in &outcomes {
        match (&outcome.final_smoothed, &outcome.failure) {
            (Some(v), _) => println!(
                "{:<16} seed {}  final smoothed reward {v:.3}",
                outcome.variant.name(),
                outcome.seed
            ),
            (None, Some(err)) => println!(
                "{:<16} seed {}  FAILED: {err}",
                outcome.variant.name(),
                outcome.seed
            ),
            _ => unreachable!("run has either a result or a failure"),
        }
    }
    for variant in AlgorithmVariant::ALL {
        println!(
            "median final smoothed reward  {:<16} {:.3}",
            variant.name(),
            median_final(&outcomes, variant)
        );
    }
    println!("overlay: {}", compare_args.out.join("compare.svg").display());
    Ok(())
}

fn cmd_plot(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["out", "window", "column"], true)?;
    let out = PathBuf::from(flags.required("out")?);
    let window = flags.int("window", 10)? as usize;
    let column_name = flags.get("column").unwrap_or("mean_reward");
    let column = PlotColumn::parse(column_name).ok_or_else(|| {
        CliError::Usage(format!("flag --column: unknown column {column_name:?}"))
    })?;
    if flags.positional.is_empty() {
        return Err(CliError::Usage("plot needs at least one CSV file".into()));
    }
    let mut series = Vec::new();
    for path in &flags.positional {
        let text = usage_err(
            std::fs::read_to_string(path).with_context(|| format!("cannot read CSV {path}")),
        )?;
        let rows = usage_err(parse_metrics(&text).map_err(Into::into))?;
        let label = Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.clone());
        series.push(Series { label, rows });
    }
    run_err(
        std::fs::write(&out, render_svg(&series, column, window.max(1)))
            .with_context(|| format!("cannot write {}", out.display())),
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
