use super::snr::fft_size_for;
use super::{mean_of_best_95, segment_grid};
use crate::error::{Error, Result};
use crate::signal::{AudioClip, SpectrumAnalyzer};

/// Critical band centers and bandwidths in Hz.
pub const CRITICAL_BANDS: [(f64, f64); 25] = [
    (50.0, 70.0),
    (120.0, 70.0),
    (190.0, 70.0),
    (260.0, 70.0),
    (330.0, 70.0),
    (400.0, 70.0),
    (470.0, 70.0),
    (540.0, 77.3724),
    (617.372, 86.0056),
    (703.378, 95.3398),
    (798.717, 105.411),
    (904.128, 116.256),
    (1020.38, 127.914),
    (1148.30, 140.423),
    (1288.72, 153.823),
    (1442.54, 168.154),
    (1610.70, 183.457),
    (1794.16, 199.776),
    (1993.93, 217.153),
    (2211.08, 235.631),
    (2446.71, 255.255),
    (2701.97, 276.072),
    (2978.04, 298.126),
    (3276.17, 321.465),
    (3597.63, 346.136),
];

const K_MAX: f64 = 20.0;
const K_LOCMAX: f64 = 1.0;

fn critical_filters(sample_rate: u32, n_fft: usize) -> Vec<Vec<f64>> {
    let half = n_fft / 2;
    let nyq = sample_rate as f64 / 2.0;
    let bw_min = CRITICAL_BANDS[0].1;
    let min_factor = (-30.0 / (2.0 * 2.303f64)).exp();
    CRITICAL_BANDS
        .iter()
        .map(|&(cf, bw_hz)| {
            let f0 = cf / nyq * half as f64;
            let bw = bw_hz / nyq * half as f64;
            let norm = bw_min.ln() - bw_hz.ln();
            (0..half)
                .map(|j| {
                    let v = (-11.0 * ((j as f64 - f0) / bw).powi(2) + norm).exp();
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

/// Klatt weights for band energies in dB (one weight per slope).
fn klatt_weights(energy: &[f64]) -> Vec<f64> {
    let slope: Vec<f64> = energy.windows(2).map(|w| w[1] - w[0]).collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = slope.len();
    (0..m)
        .map(|i| {
            let peak = if slope[i] > 0.0 {
                let mut n = i;
                while n < m && slope[n] > 0.0 {
                    n += 1;
                }
                energy[n - 1]
            } else {
                let mut n = i as isize;
                while n >= 0 && slope[n as usize] <= 0.0 {
                    n -= 1;
                }
                energy[(n + 1) as usize]
            };
            let wmax = K_MAX / (K_MAX + max - energy[i]);
            let wloc = K_LOCMAX / (K_LOCMAX + peak - energy[i]);
            wmax * wloc
        })
        .collect()
}

/// Weighted squared slope difference for one frame of band energies (dB).
pub fn wss_frame_distance(clean_db: &[f64], processed_db: &[f64]) -> f64 {
    let wc = klatt_weights(clean_db);
    let wp = klatt_weights(processed_db);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..wc.len() {
        let w = (wc[i] + wp[i]) / 2.0;
        let sc = clean_db[i + 1] - clean_db[i];
        let sp = processed_db[i + 1] - processed_db[i];
        num += w * (sc - sp) * (sc - sp);
        den += w;
    }
    num / den
}

/// Weighted spectral slope distance averaged over the best 95% of frames.
///
/// Frames where the clean signal is digitally silent are skipped.
pub fn wss(clean: &AudioClip, processed: &AudioClip) -> Result<f64> {
    let (grid, n) = segment_grid(clean, processed)?;
    let n_fft = fft_size_for(grid.frame_length);
    let filters = critical_filters(clean.sample_rate, n_fft);
    let mut fft = SpectrumAnalyzer::new(n_fft)?;
    let band_db = |spec: &[f64]| -> Vec<f64> {
        filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(spec).map(|(w, p)| w * p).sum();
                10.0 * e.max(1e-10).log10()
            })
            .collect()
    };
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        if grid.frame(&clean.samples, i).iter().all(|&v| v == 0.0) {
            continue;
        }
        let cs = fft.power(&grid.windowed(&clean.samples, i))?;
        let ps = fft.power(&grid.windowed(&processed.samples, i))?;
        vals.push(wss_frame_distance(&band_db(&cs), &band_db(&ps)));
    }
    mean_of_best_95(vals).ok_or_else(|| Error::Metric("clean signal is silent in every frame".into()))
}
