use crate::error::{Error, Result};

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Mean squared amplitude.
pub fn power(clip: &AudioClip) -> Result<f64> {
    power_of(&clip.samples)
}

pub(crate) fn power_of(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("power of an empty clip".into()));
    }
    Ok(samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn power_cases() {
        let sine: Vec<f64> = (0..1600).map(|n| (2.0 * PI * 100.0 * n as f64 / 16000.0).sin()).collect();
        let clip = AudioClip::new(sine.clone(), 16000).unwrap();
        assert!((power(&clip).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(power(&AudioClip::new(vec![0.0; 10], 16000).unwrap()).unwrap(), 0.0);
        let doubled = AudioClip::new([sine.clone(), sine].concat(), 16000).unwrap();
        assert!((power(&doubled).unwrap() - power(&clip).unwrap()).abs() < 1e-15);
        assert!(power(&AudioClip::new(vec![], 16000).unwrap()).is_err());
    }
}
