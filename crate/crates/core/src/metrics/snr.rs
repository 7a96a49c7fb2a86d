use super::{clamp_db, segment_grid, SNR_CEIL_DB};
use crate::error::{Error, Result};
use crate::signal::features::{hz_to_mel, mel_to_hz};
use crate::signal::{AudioClip, SpectrumAnalyzer};

pub const FWSNR_BANDS: usize = 25;
/// Exponent applied to the clean band magnitude to form band weights.
pub const FWSNR_GAMMA: f64 = 0.2;

/// Segmental SNR over rectangular frames.
pub fn segmental_snr(clean: &AudioClip, processed: &AudioClip) -> Result<f64> {
    let (grid, n) = segment_grid(clean, processed)?;
    let mut total = 0.0;
    for i in 0..n {
        let c = grid.frame(&clean.samples, i);
        let p = grid.frame(&processed.samples, i);
        let sig: f64 = c.iter().map(|v| v * v).sum();
        let err: f64 = c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        total += if err == 0.0 {
            SNR_CEIL_DB
        } else {
            clamp_db(10.0 * (sig / err).log10())
        };
    }
    Ok(total / n as f64)
}

/// Gaussian band filters on `n_fft/2 + 1` bins with mel-spaced centers.
pub(crate) fn fwsnr_filters(sample_rate: u32, n_fft: usize) -> Vec<Vec<f64>> {
    let nyq = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyq);
    let edge = |j: usize| mel_to_hz(top * j as f64 / (FWSNR_BANDS + 1) as f64);
    let min_factor = (-30.0 / (2.0 * 2.303f64)).exp();
    (1..=FWSNR_BANDS)
        .map(|j| {
            let center = edge(j);
            let bw = edge(j + 1) - edge(j - 1);
            (0..=n_fft / 2)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / n_fft as f64;
                    let v = (-11.0 * ((f - center) / bw).powi(2)).exp();
                    if v > min_factor {
                        v
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub(crate) fn fft_size_for(frame_len: usize) -> usize {
    (2 * frame_len).next_power_of_two()
}

/// Frequency-weighted segmental SNR.
///
/// Frames whose clean spectrum has no energy in any band are skipped.
pub fn fwsnrseg(clean: &AudioClip, processed: &AudioClip) -> Result<f64> {
    let (grid, n) = segment_grid(clean, processed)?;
    let n_fft = fft_size_for(grid.frame_length);
    let filters = fwsnr_filters(clean.sample_rate, n_fft);
    let mut fft = SpectrumAnalyzer::new(n_fft)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for i in 0..n {
        let cs = fft.magnitude(&grid.windowed(&clean.samples, i))?;
        let ps = fft.magnitude(&grid.windowed(&processed.samples, i))?;
        let mut weight_sum = 0.0;
        let mut shortfall = 0.0;
        for f in &filters {
            let bc: f64 = f.iter().zip(&cs).map(|(w, m)| w * m).sum();
            let bp: f64 = f.iter().zip(&ps).map(|(w, m)| w * m).sum();
            let w = bc.powf(FWSNR_GAMMA);
            let diff = bc - bp;
            let snr = if diff == 0.0 {
                SNR_CEIL_DB
            } else {
                clamp_db(10.0 * (bc * bc / (diff * diff)).log10())
            };
            weight_sum += w;
            shortfall += w * (SNR_CEIL_DB - snr);
        }
        if weight_sum > 0.0 {
            total += SNR_CEIL_DB - shortfall / weight_sum;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Metric("clean signal is silent in every frame".into()));
    }
    Ok(total / used as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn noise(seed: u64, len: usize, amp: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-amp..amp)).collect()
    }

    fn clip(v: Vec<f64>) -> AudioClip {
        AudioClip::new(v, 16000).unwrap()
    }

    #[test]
    fn segsnr_identity_and_zero_output() {
        let x = clip(noise(1, 16000, 0.5));
        assert_eq!(segmental_snr(&x, &x).unwrap(), 35.0);
        let zero = clip(vec![0.0; 16000]);
        assert!(segmental_snr(&x, &zero).unwrap().abs() < 1e-12);
    }

    #[test]
    fn segsnr_matches_frame_loop() {
        // Degradation level changes every 2000 samples.
        let c = noise(2, 8000, 0.5);
        let e = noise(3, 8000, 1.0);
        let p: Vec<f64> = c
            .iter()
            .zip(&e)
            .enumerate()
            .map(|(i, (a, b))| a + b * [0.001, 0.05, 0.5, 3.0][i / 2000])
            .collect();
        let got = segmental_snr(&clip(c.clone()), &clip(p.clone())).unwrap();
        let mut vals = Vec::new();
        let mut start = 0;
        while start + 480 <= c.len() {
            let mut s = 0.0;
            let mut n = 0.0;
            for k in start..start + 480 {
                s += c[k] * c[k];
                n += (c[k] - p[k]) * (c[k] - p[k]);
            }
            vals.push((10.0 * (s / n).log10()).max(-10.0).min(35.0));
            start += 120;
        }
        let want = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((got - want).abs() < 1e-12);
        assert!(vals.contains(&35.0) && vals.iter().any(|&v| v == -10.0));
    }

    #[test]
    fn fwsnr_identity_is_exact_ceiling() {
        let x = clip(noise(4, 16000, 0.5));
        assert_eq!(fwsnrseg(&x, &x).unwrap(), 35.0);
    }

    #[test]
    fn fwsnr_band_loop_oracle() {
        // Two frames (600 samples), direct DFT and independently built bands.
        let c: Vec<f64> = (0..600).map(|n| (2.0 * PI * 440.0 * n as f64 / 16000.0).sin() * 0.4).collect();
        let e = noise(5, 600, 0.1);
        let p: Vec<f64> = c.iter().zip(&e).map(|(a, b)| a + b).collect();
        let got = fwsnrseg(&clip(c.clone()), &clip(p.clone())).unwrap();

        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        let step = mel(8000.0) / 26.0;
        let floor = (-30.0f64 / 4.606).exp();
        let spec = |x: &[f64], start: usize| -> Vec<f64> {
            (0..=512)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for n in 0..480 {
                        let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / 480.0).cos();
                        let ang = -2.0 * PI * (k * n) as f64 / 1024.0;
                        re += w * x[start + n] * ang.cos();
                        im += w * x[start + n] * ang.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect()
        };
        let mut frames = Vec::new();
        for start in [0usize, 120] {
            let (cs, ps) = (spec(&c, start), spec(&p, start));
            let (mut num, mut den) = (0.0, 0.0);
            for j in 1..=25 {
                let center = hz(step * j as f64);
                let bw = hz(step * (j + 1) as f64) - hz(step * (j - 1) as f64);
                let (mut bc, mut bp) = (0.0, 0.0);
                for k in 0..=512 {
                    let g = (-11.0 * ((k as f64 * 15.625 - center) / bw).powi(2)).exp();
                    let g = if g > floor { g } else { 0.0 };
                    bc += g * cs[k];
                    bp += g * ps[k];
                }
                let snr = (10.0 * (bc * bc / ((bc - bp) * (bc - bp))).log10()).max(-10.0).min(35.0);
                num += bc.powf(0.2) * snr;
                den += bc.powf(0.2);
            }
            frames.push(num / den);
        }
        assert_eq!(frames.len(), 2);
        let want = (frames[0] + frames[1]) / 2.0;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn short_or_mismatched_inputs_rejected() {
        let a = clip(noise(6, 400, 0.5));
        assert!(segmental_snr(&a, &a).is_err());
        let b = clip(noise(7, 1000, 0.5));
        let c = clip(noise(8, 1001, 0.5));
        assert!(fwsnrseg(&b, &c).is_err());
    }

    #[test]
    fn filters_cover_band_and_are_ordered() {
        let f = fwsnr_filters(16000, 1024);
        let peaks: Vec<usize> = f
            .iter()
            .map(|row| row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0)
            .collect();
        assert!(peaks.windows(2).all(|w| w[0] < w[1]));
        assert!(*peaks.last().unwrap() > 400);
    }
}
