//! Synthesizes the toy intent corpus and prints its layout.
//!
//! cargo run --release --example toy_corpus -- [out_dir] [n_classes] [n_per_class]

use std::collections::BTreeMap;
use std::path::PathBuf;

use nil_core::harness::synthesize_toy_corpus;
use nil_core::manifest::Split;
use nil_core::signal::read_wav;

fn main() -> nil_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "toy-corpus".into()));
    let n_classes = args.next().map(|s| s.parse().expect("class count")).unwrap_or(31);
    let n_per_class = args.next().map(|s| s.parse().expect("clips per class")).unwrap_or(8);
    let corpus = synthesize_toy_corpus(n_classes, n_per_class, 7, &out)?;
    println!("manifest: {}", corpus.manifest.display());
    for split in Split::ALL {
        println!("{split:>5}: {} clips", corpus.split(split).len());
    }
    let mut per_intent: BTreeMap<String, usize> = BTreeMap::new();
    for e in &corpus.entries {
        *per_intent.entry(e.intent().to_string()).or_default() += 1;
    }
    for (intent, n) in per_intent.iter().take(5) {
        println!("{intent}: {n}");
    }
    let first = read_wav(&corpus.entries[0].path)?;
    println!("first clip: {:.2} s, peak {:.3}", first.duration_secs(), first.peak());
    println!("noise bank: {}", corpus.noise_dir.display());
    Ok(())
}
