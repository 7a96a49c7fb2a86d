//! Objective speech quality and intelligibility measures.
//!
//! All measures take a clean reference and a processed signal of equal length
//! and sample rate. Segmental measures use 30 ms frames with 75% overlap and
//! clamp per-frame values to [-10, 35] dB.

mod composite;
mod corpus;
mod lpc;
mod pesq;
mod snr;
mod stoi;
mod wss;

pub use composite::{composites, composites_unclamped, Composites};
pub use corpus::{
    histogram, histogram_range, score_corpus, score_pair, write_histogram, write_report, CorpusScores, HistogramBin, MetricKind,
    MetricReport, MetricSelection, ScoredRow,
};
pub use lpc::{autocorrelation, levinson_durbin, llr, llr_detailed, LlrOutcome, LPC_ORDER};
pub use pesq::{CommandPesq, PesqScorer};
pub use snr::{fwsnrseg, segmental_snr, FWSNR_BANDS, FWSNR_GAMMA};
pub use stoi::stoi;
pub use wss::{wss, wss_frame_distance, CRITICAL_BANDS};

use crate::error::{Error, Result};
use crate::signal::{AudioClip, FrameGrid};

/// Lower clamp for per-frame SNR values, in dB.
pub const SNR_FLOOR_DB: f64 = -10.0;
/// Upper clamp for per-frame SNR values, in dB.
pub const SNR_CEIL_DB: f64 = 35.0;

pub(crate) fn check_pair(clean: &AudioClip, processed: &AudioClip) -> Result<()> {
    if clean.sample_rate != processed.sample_rate {
        return Err(Error::Metric(format!(
            "sample rates differ: clean {} Hz, processed {} Hz",
            clean.sample_rate, processed.sample_rate
        )));
    }
    if clean.len() != processed.len() {
        return Err(Error::Metric(format!(
            "lengths differ: clean {} samples, processed {}",
            clean.len(),
            processed.len()
        )));
    }
    Ok(())
}

/// 30 ms frames at 75% overlap; errors when the clip holds no full frame.
pub(crate) fn segment_grid(clean: &AudioClip, processed: &AudioClip) -> Result<(FrameGrid, usize)> {
    check_pair(clean, processed)?;
    let len = (0.030 * clean.sample_rate as f64).round() as usize;
    let grid = FrameGrid::new(len, len / 4);
    let n = grid.frame_count(clean.len());
    if n == 0 {
        return Err(Error::Metric(format!(
            "clip of {} samples is shorter than one {len}-sample frame",
            clean.len()
        )));
    }
    Ok((grid, n))
}

pub(crate) fn clamp_db(v: f64) -> f64 {
    if v.is_nan() {
        SNR_FLOOR_DB
    } else {
        v.clamp(SNR_FLOOR_DB, SNR_CEIL_DB)
    }
}

/// Mean of the smallest `round(0.95·n)` values.
pub(crate) fn mean_of_best_95(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let keep = ((values.len() as f64 * 0.95).round() as usize).max(1);
    Some(values[..keep].iter().sum::<f64>() / keep as f64)
}
