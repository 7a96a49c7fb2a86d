//! 40-band log-mel features (20 ms Hann frames, 10 ms hop, 512-point FFT).

use super::frames::FrameGrid;
use super::spectrum::SpectrumAnalyzer;
use super::AudioClip;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const N_MELS: usize = 40;
pub const FFT_SIZE: usize = 512;
pub const FRAME_SECS: f64 = 0.020;
pub const HOP_SECS: f64 = 0.010;
/// Added to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale between `0` Hz and Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_filters: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
    /// `n_filters × (fft_size/2 + 1)`, row-major.
    pub weights: Vec<f64>,
    /// Peak frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, fft_size: usize, sample_rate: u32) -> Self {
        let bins = fft_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
            .collect();
        let mut weights = vec![0.0; n_filters * bins];
        for m in 0..n_filters {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for b in 0..bins {
                let f = b as f64 * sample_rate as f64 / fft_size as f64;
                let rise = (f - lo) / (center - lo);
                let fall = (hi - f) / (hi - center);
                weights[m * bins + b] = rise.min(fall).max(0.0);
            }
        }
        Self {
            n_filters,
            fft_size,
            sample_rate,
            weights,
            centers_hz: edges[1..=n_filters].to_vec(),
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let b = self.bins();
        &self.weights[m * b..(m + 1) * b]
    }

    pub fn apply(&self, power_spectrum: &[f64]) -> Vec<f64> {
        (0..self.n_filters)
            .map(|m| self.row(m).iter().zip(power_spectrum).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// `[40 × frames]` log-mel energies of a 16 kHz clip.
pub fn log_mel_features(clip: &AudioClip) -> Result<Tensor> {
    let grid = FrameGrid::from_secs(FRAME_SECS, HOP_SECS, clip.sample_rate);
    let frames = grid.frame_count(clip.len());
    if frames == 0 {
        return Err(Error::InvalidArgument(format!(
            "clip of {} samples is shorter than one {} ms frame",
            clip.len(),
            FRAME_SECS * 1000.0
        )));
    }
    let bank = MelFilterbank::new(N_MELS, FFT_SIZE, clip.sample_rate);
    let mut analyzer = SpectrumAnalyzer::new(FFT_SIZE)?;
    let mut out = vec![0.0; N_MELS * frames];
    for t in 0..frames {
        let spec = analyzer.power(&grid.windowed(&clip.samples, t))?;
        for (m, e) in bank.apply(&spec).into_iter().enumerate() {
            out[m * frames + t] = (e + LOG_FLOOR).ln();
        }
    }
    Tensor::matrix(N_MELS, frames, out)
}
