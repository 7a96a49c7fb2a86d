//! Scores noisy mixtures of one toy clip at every SNR with the objective
//! quality measures.
//!
//! cargo run --release --example quality_metrics

use nil_core::degrade::{mix_at_snr, PAPER_SNRS_DB};
use nil_core::harness::{synthesize_toy_corpus, toy_noise_bank};
use nil_core::metrics::{score_pair, MetricSelection};
use nil_core::signal::read_wav;

fn main() -> nil_core::Result<()> {
    let dir = std::env::temp_dir().join("nil-quality-metrics");
    let corpus = synthesize_toy_corpus(2, 3, 1, &dir)?;
    let clean = read_wav(&corpus.entries[0].path)?;
    let selection = MetricSelection::all().with_composite_inputs();
    println!("{:>6} {:>7} {:>9} {:>8} {:>7} {:>7}", "snr", "stoi", "fwsnrseg", "segsnr", "llr", "wss");
    for (name, noise) in toy_noise_bank(1) {
        println!("noise: {name}");
        let mut snrs = PAPER_SNRS_DB.to_vec();
        snrs.reverse();
        for snr in snrs {
            let mix = mix_at_snr(&clean, &noise, snr, 0)?;
            let m = score_pair(&mix.clean_ref, &mix.noisy, &selection)?;
            let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
            println!(
                "{snr:>6.0} {:>7} {:>9} {:>8} {:>7} {:>7}",
                f(m.stoi),
                f(m.fwsnrseg),
                f(m.segsnr),
                f(m.llr),
                f(m.wss)
            );
        }
    }
    println!("pesq and the composites need an external scorer (nil metrics --pesq-cmd)");
    Ok(())
}
