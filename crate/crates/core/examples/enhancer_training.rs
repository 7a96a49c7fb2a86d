//! Trains a small Wave-U-Net on contaminated toy clips and compares STOI of
//! the noisy and enhanced validation audio.
//!
//! cargo run --release --example enhancer_training -- [work_dir] [epochs]

use std::path::PathBuf;

use nil_core::degrade::{contaminate_corpus, ContaminationSpec, NoiseBank};
use nil_core::enhance::{load_pairs, train_enhancer, EnhanceTrainParams, WaveUNet, WaveUNetConfig};
use nil_core::harness::synthesize_toy_corpus;
use nil_core::manifest::{pairs_from_manifest, ManifestEntry, Split};
use nil_core::metrics::stoi;
use nil_core::nn::{save_weights, AdamConfig};

fn main() -> nil_core::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let work = PathBuf::from(args.next().unwrap_or_else(|| "enhancer-demo".into()));
    let epochs = args.next().map(|s| s.parse().expect("epoch count")).unwrap_or(50);
    let corpus = synthesize_toy_corpus(6, 6, 2, &work.join("clean"))?;
    let bank = NoiseBank::load_dir(&corpus.noise_dir)?;
    let noisy = contaminate_corpus(&corpus.entries, &bank, &ContaminationSpec::paper_default(2), &work.join("noisy"))?;
    let pick = |s: Split| -> nil_core::Result<_> {
        let entries: Vec<ManifestEntry> = noisy.entries.iter().filter(|e| e.split == s).cloned().collect();
        load_pairs(&pairs_from_manifest(&entries))
    };
    let (train, valid) = (pick(Split::Train)?, pick(Split::Valid)?);
    let config = WaveUNetConfig { depth: 4, base_filters: 8, growth_per_level: 8, kernel_down: 15, kernel_up: 5, input_len: 2048 };
    let params = EnhanceTrainParams {
        max_epochs: epochs,
        batch_size: 8,
        adam: AdamConfig { lr: 0.002, ..AdamConfig::default() },
        seed: 2,
        eval_interval: 10,
        patience: 3,
    };
    let trained = train_enhancer(WaveUNet::build(config, 2)?, &train, &valid, &params)?;
    let loss = &trained.log.epoch_loss;
    println!("mse: {:.3e} -> {:.3e} over {} epochs", loss[0], loss[loss.len() - 1], loss.len());
    println!("validation stoi by epoch: {:?}", trained.log.evals);
    for p in &valid {
        let enhanced = trained.model.enhance_clip(&p.noisy)?;
        println!("{}: stoi {:.3} -> {:.3}", p.id, stoi(&p.clean, &p.noisy)?, stoi(&p.clean, &enhanced)?);
    }
    save_weights(&trained.model, &work.join("enhancer.nil"))?;
    println!("weights: {}", work.join("enhancer.nil").display());
    Ok(())
}
