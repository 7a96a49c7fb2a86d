use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Reusable real-input FFT of a fixed power-of-two size.
pub struct SpectrumAnalyzer {
    fft_size: usize,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl SpectrumAnalyzer {
    pub fn new(fft_size: usize) -> Result<Self> {
        if fft_size == 0 || !fft_size.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "fft size {fft_size} is not a power of two"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            fft_size,
            fft,
            buf: vec![Complex64::default(); fft_size],
            scratch,
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    fn transform(&mut self, frame: &[f64]) -> Result<&[Complex64]> {
        if frame.len() > self.fft_size {
            return Err(Error::InvalidArgument(format!(
                "frame of {} samples exceeds fft size {}",
                frame.len(),
                self.fft_size
            )));
        }
        for (dst, &s) in self.buf.iter_mut().zip(frame) {
            *dst = Complex64::new(s, 0.0);
        }
        self.buf[frame.len()..].fill(Complex64::default());
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        Ok(&self.buf[..self.fft_size / 2 + 1])
    }

    /// `|X_k|` for `k = 0..=N/2` of the zero-padded frame.
    pub fn magnitude(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        Ok(self.transform(frame)?.iter().map(|c| c.norm()).collect())
    }

    /// `|X_k|²` for `k = 0..=N/2`.
    pub fn power(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        Ok(self.transform(frame)?.iter().map(|c| c.norm_sqr()).collect())
    }
}

/// Magnitude spectrum (`fft_size/2 + 1` bins) of an already-windowed frame.
pub fn dft_magnitude(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    SpectrumAnalyzer::new(fft_size)?.magnitude(frame)
}
