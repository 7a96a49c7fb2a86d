//! Imports a corpus in the Fluent Speech Commands layout and summarizes it.
//!
//! cargo run --release --example fsc_import -- <fsc_root> [out_dir] [limit_per_split]

use std::collections::BTreeMap;
use std::path::PathBuf;

use nil_core::harness::import_fsc;

fn main() -> nil_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().expect("usage: fsc_import <fsc_root> [out_dir] [limit]"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "fsc-import".into()));
    let limit = args.next().map(|s| s.parse().expect("numeric limit"));
    let import = import_fsc(&root, limit, &out)?;
    let mut per_split: BTreeMap<String, usize> = BTreeMap::new();
    for e in &import.entries {
        *per_split.entry(e.split.to_string()).or_default() += 1;
    }
    println!("manifest: {}", import.manifest.display());
    println!("utterances per split: {per_split:?}");
    println!("{} intents:", import.labels.len());
    for (i, label) in import.labels.labels().iter().enumerate() {
        println!("{i:>3} {label}");
    }
    Ok(())
}
