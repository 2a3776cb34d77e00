//! Minimal end-to-end library usage: generate a world, train briefly, and
//! print the metrics. The output is a pure function of the seeds, so running
//! this with and without the `parallel` feature prints identical text.

use searchrl_core::kbgen::{generate_kb, infer_schema, infer_vocab_size, split_prompts, KbGenConfig};
use searchrl_core::metrics::metrics_to_string;
use searchrl_core::objectives::AlgorithmVariant;
use searchrl_core::policy::FeatureShape;
use searchrl_core::priming::{primed_params, PrimingConfig};
use searchrl_core::trainer::{train, TrainConfig};

fn main() {
    let gen = KbGenConfig::default();
    let (kb, prompts) = generate_kb(&gen).expect("default generator config is feasible");
    let schema = infer_schema(&kb).expect("generated worlds are layered");
    let vocab = infer_vocab_size(&kb, &prompts);
    let (train_prompts, eval_prompts) = split_prompts(&prompts, 0.2, gen.seed);

    let shape = FeatureShape {
        feature_dim: 4096,
        window: 4,
    };
    let initial = primed_params(&schema, vocab, shape, &PrimingConfig::default());

    let mut cfg = TrainConfig::new(AlgorithmVariant::Dspo);
    cfg.steps = 40;
    cfg.eval_every = 10;
    cfg.lr = 1.0;
    let (_, reports) =
        train(&cfg, &kb, &train_prompts, &eval_prompts, initial).expect("short run trains");
    print!("{}", metrics_to_string(&reports));
}
