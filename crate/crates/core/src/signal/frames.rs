use std::f64::consts::PI;

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Fixed-length, fixed-hop framing with a Hann window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    pub frame_length: usize,
    pub hop: usize,
    pub window: Vec<f64>,
}

impl FrameGrid {
    pub fn new(frame_length: usize, hop: usize) -> Self {
        assert!(frame_length > 0 && hop > 0, "frame length and hop must be positive");
        Self {
            frame_length,
            hop,
            window: hann_periodic(frame_length),
        }
    }

    /// Frame length and hop given in seconds, rounded to whole samples.
    pub fn from_secs(frame_secs: f64, hop_secs: f64, sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        Self::new((frame_secs * sr).round() as usize, (hop_secs * sr).round() as usize)
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_length {
            0
        } else {
            1 + (len - self.frame_length) / self.hop
        }
    }

    pub fn frame<'a>(&self, samples: &'a [f64], index: usize) -> &'a [f64] {
        let start = index * self.hop;
        &samples[start..start + self.frame_length]
    }

    /// Windowed copy of frame `index`.
    pub fn windowed(&self, samples: &[f64], index: usize) -> Vec<f64> {
        self.frame(samples, index)
            .iter()
            .zip(&self.window)
            .map(|(s, w)| s * w)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_formula() {
        let grid = FrameGrid::new(320, 160);
        assert_eq!(grid.frame_count(16000), 99);
        assert_eq!(grid.frame_count(320), 1);
        assert_eq!(grid.frame_count(319), 0);
        assert_eq!(FrameGrid::from_secs(0.02, 0.01, 16000), grid);
    }

    #[test]
    fn periodic_hann_shape() {
        let w = hann_periodic(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        assert!((w[1] - w[7]).abs() < 1e-15);
    }
}
