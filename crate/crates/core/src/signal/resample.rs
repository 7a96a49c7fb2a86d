//! Rational polyphase resampling with a Blackman-windowed sinc low-pass.

use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

/// Sinc zero crossings on each side of the filter centre.
const ZERO_CROSSINGS: f64 = 24.0;
/// Passband edge as a fraction of the lower rate's Nyquist frequency.
const CUTOFF_FRACTION: f64 = 0.9;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(tau: f64, half_width: f64) -> f64 {
    if tau.abs() > half_width {
        return 0.0;
    }
    let r = tau / half_width;
    0.42 + 0.5 * (PI * r).cos() + 0.08 * (2.0 * PI * r).cos()
}

/// One tap set per output phase.
struct PolyphaseBank {
    first_tap: Vec<isize>,
    taps: Vec<Vec<f64>>,
}

impl PolyphaseBank {
    fn new(up: u64, source_rate: f64, target_rate: f64) -> Self {
        let cutoff_hz = CUTOFF_FRACTION * source_rate.min(target_rate) / 2.0;
        let fc = cutoff_hz / source_rate; // cycles per source sample
        let half_width = ZERO_CROSSINGS / (2.0 * fc);
        let mut first_tap = Vec::with_capacity(up as usize);
        let mut taps = Vec::with_capacity(up as usize);
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            let k_lo = (frac - half_width).ceil() as isize;
            let k_hi = (frac + half_width).floor() as isize;
            let mut h: Vec<f64> = (k_lo..=k_hi)
                .map(|k| {
                    let tau = frac - k as f64;
                    2.0 * fc * sinc(2.0 * fc * tau) * blackman(tau, half_width)
                })
                .collect();
            let dc: f64 = h.iter().sum();
            h.iter_mut().for_each(|v| *v /= dc);
            first_tap.push(k_lo);
            taps.push(h);
        }
        Self { first_tap, taps }
    }
}

/// Resamples to `target_rate`; output length is `round(L · target / source)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 || clip.sample_rate == 0 {
        return Err(Error::InvalidArgument("sample rates must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let (src, tgt) = (clip.sample_rate as u64, target_rate as u64);
    let g = gcd(src, tgt);
    let (up, down) = (tgt / g, src / g);
    let bank = PolyphaseBank::new(up, src as f64, tgt as f64);
    let len = clip.len() as u64;
    let out_len = ((len * tgt) as f64 / src as f64).round() as usize;
    let x = &clip.samples;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as isize;
        let phase = (pos % up) as usize;
        let start = base + bank.first_tap[phase];
        let mut acc = 0.0;
        for (i, h) in bank.taps[phase].iter().enumerate() {
            let j = start + i as isize;
            if j >= 0 && (j as usize) < x.len() {
                acc += h * x[j as usize];
            }
        }
        out.push(acc);
    }
    AudioClip::new(out, target_rate)
}
