use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal::{resample, AudioClip, SpectrumAnalyzer};

use super::check_pair;

const FS: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Hann window without its zero end points (length `n + 2` trimmed).
fn window() -> Vec<f64> {
    (1..=FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (FRAME + 1) as f64).cos())
        .collect()
}

/// One-third octave band matrix over the `NFFT/2 + 1` bins.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let freqs: Vec<f64> = (0..=NFFT / 2).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).powi(2).total_cmp(&(b.1 - target).powi(2)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Drops frames more than `DYN_RANGE_DB` below the loudest clean frame and
/// rebuilds both signals by overlap-add.
fn remove_silent_frames(x: &[f64], y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    if x.len() < FRAME {
        return (Vec::new(), Vec::new());
    }
    let starts: Vec<usize> = (0..=x.len() - FRAME).step_by(HOP).collect();
    let energy = |s: usize| {
        let e: f64 = (0..FRAME).map(|n| (w[n] * x[s + n]).powi(2)).sum();
        20.0 * (e.sqrt() + EPS).log10()
    };
    let energies: Vec<f64> = starts.iter().map(|&s| energy(s)).collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (kept.len() - 1) * HOP + FRAME;
    let mut xo = vec![0.0; len];
    let mut yo = vec![0.0; len];
    for (i, &s) in kept.iter().enumerate() {
        for n in 0..FRAME {
            xo[i * HOP + n] += w[n] * x[s + n];
            yo[i * HOP + n] += w[n] * y[s + n];
        }
    }
    (xo, yo)
}

/// Band envelopes `[band][frame]`.
fn band_envelopes(x: &[f64], w: &[f64], bands: &[(usize, usize)], fft: &mut SpectrumAnalyzer) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); bands.len()];
    if x.len() <= FRAME {
        return Ok(out);
    }
    let mut frame = vec![0.0; FRAME];
    for s in (0..x.len() - FRAME).step_by(HOP) {
        for n in 0..FRAME {
            frame[n] = w[n] * x[s + n];
        }
        let p = fft.power(&frame)?;
        for (env, &(lo, hi)) in out.iter_mut().zip(bands) {
            env.push(p[lo..hi].iter().sum::<f64>().sqrt());
        }
    }
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Short-time objective intelligibility.
///
/// Both signals are resampled to 10 kHz and silent frames removed before
/// scoring. Requires at least 30 frames (384 ms) of retained speech.
pub fn stoi(clean: &AudioClip, processed: &AudioClip) -> Result<f64> {
    check_pair(clean, processed)?;
    let x = resample(clean, FS)?;
    let y = resample(processed, FS)?;
    let w = window();
    let (x, y) = remove_silent_frames(&x.samples, &y.samples, &w);
    let bands = third_octave_bands();
    let mut fft = SpectrumAnalyzer::new(NFFT)?;
    let xe = band_envelopes(&x, &w, &bands, &mut fft)?;
    let ye = band_envelopes(&y, &w, &bands, &mut fft)?;
    let frames = xe[0].len();
    if frames < SEGMENT {
        return Err(Error::Metric(format!(
            "STOI needs at least {SEGMENT} frames (384 ms) of non-silent speech, got {frames}"
        )));
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=frames {
        for (xb, yb) in xe.iter().zip(&ye) {
            let xs = &xb[m - SEGMENT..m];
            let ys = &yb[m - SEGMENT..m];
            let alpha = norm(xs) / (norm(ys) + EPS);
            let yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(&yv, &xv)| (alpha * yv).min(xv * (1.0 + clip)))
                .collect();
            let xm = xs.iter().sum::<f64>() / SEGMENT as f64;
            let ym = yp.iter().sum::<f64>() / SEGMENT as f64;
            let xc: Vec<f64> = xs.iter().map(|v| v - xm).collect();
            let yc: Vec<f64> = yp.iter().map(|v| v - ym).collect();
            let (nx, ny) = (norm(&xc) + EPS, norm(&yc) + EPS);
            total += xc.iter().zip(&yc).map(|(a, b)| (a / nx) * (b / ny)).sum::<f64>();
            count += 1;
        }
    }
    Ok(total / count as f64)
}
