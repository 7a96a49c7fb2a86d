//! Mixes the toy corpus with its noise bank at the standard SNR list and
//! re-measures every mixture from the written files.
//!
//! cargo run --release --example contaminate -- [work_dir]

use std::path::PathBuf;

use nil_core::degrade::{contaminate_corpus, measured_snr_db, ContaminationSpec, NoiseBank};
use nil_core::harness::synthesize_toy_corpus;
use nil_core::signal::read_wav;

fn main() -> nil_core::Result<()> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "contaminate-demo".into()));
    let corpus = synthesize_toy_corpus(4, 3, 3, &work.join("clean"))?;
    let bank = NoiseBank::load_dir(&corpus.noise_dir)?;
    let spec = ContaminationSpec::paper_default(3);
    let outcome = contaminate_corpus(&corpus.entries, &bank, &spec, &work.join("noisy"))?;
    println!("{:<14} {:>7} {:>8} {:>9} {:>8}", "id", "noise", "target", "measured", "norm");
    for (entry, record) in outcome.entries.iter().zip(&outcome.records) {
        let noisy = read_wav(&entry.path)?;
        let clean_ref = read_wav(entry.clean_ref.as_ref().expect("noisy entries carry a reference"))?;
        println!(
            "{:<14} {:>7} {:>8.1} {:>9.3} {:>8.4}",
            record.utterance_id,
            record.noise_name,
            record.snr_db,
            measured_snr_db(&clean_ref.samples, &noisy.samples),
            record.norm_factor
        );
    }
    println!("provenance: {}", work.join("noisy/provenance.jsonl").display());
    Ok(())
}
