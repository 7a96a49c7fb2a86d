//! Trains the dilated temporal-convolution classifier on clean toy clips and
//! evaluates it on the held-out split.
//!
//! cargo run --release --example intent_classifier -- [work_dir]

use std::path::PathBuf;

use nil_core::harness::synthesize_toy_corpus;
use nil_core::intent::{evaluate, extract_features, train_classifier, ClassifierConfig, ClassifierTrainParams, IntentClassifier};
use nil_core::manifest::Split;
use nil_core::nn::AdamConfig;

fn main() -> nil_core::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "classifier-demo".into()));
    let corpus = synthesize_toy_corpus(10, 8, 4, &work)?;
    let featurize = |s: Split| -> nil_core::Result<Vec<_>> {
        extract_features(&corpus.split(s), &corpus.labels).into_iter().collect()
    };
    let (train, valid) = (featurize(Split::Train)?, featurize(Split::Valid)?);
    let config = ClassifierConfig {
        bottleneck_channels: 16,
        blocks_per_stack: 4,
        dilations: vec![1, 2, 4, 8],
        ..ClassifierConfig::paper(corpus.labels.len())
    };
    println!("receptive field: {} frames", config.receptive_field());
    let model = IntentClassifier::build(config, corpus.labels.clone(), 4)?;
    let params = ClassifierTrainParams {
        epochs: 30,
        batch_size: 16,
        adam: AdamConfig { lr: 0.003, ..AdamConfig::default() },
        seed: 4,
        stop_at_train_accuracy: None,
    };
    let trained = train_classifier(model, &train, &valid, &params)?;
    println!("initial loss {:.3} (ln K = {:.3})", trained.log.initial_loss, (corpus.labels.len() as f64).ln());
    for e in trained.log.epochs.iter().step_by(5) {
        println!("epoch {:>3}: loss {:.3}, train {:.2}, valid {:?}", e.epoch, e.loss, e.train_accuracy, e.val_accuracy);
    }
    let best = trained.best.as_ref().unwrap_or(&trained.model);
    let report = evaluate(best, &corpus.split(Split::Test))?;
    println!("test accuracy: {}/{} = {:.3}", report.correct, report.total, report.accuracy);
    Ok(())
}
