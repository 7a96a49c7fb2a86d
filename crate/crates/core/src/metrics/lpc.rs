use super::{mean_of_best_95, segment_grid};
use crate::error::{Error, Result};
use crate::signal::AudioClip;

/// LPC order used at 16 kHz.
pub const LPC_ORDER: usize = 16;

/// `r[k] = Σ x[n]·x[n+k]` for `k = 0..=order`.
pub fn autocorrelation(x: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|k| x.iter().zip(x.iter().skip(k)).map(|(a, b)| a * b).sum())
        .collect()
}

/// Prediction-error filter `[1, a1, .., ap]` from autocorrelation `r`.
///
/// Fails when the prediction error becomes non-positive.
pub fn levinson_durbin(r: &[f64]) -> Result<Vec<f64>> {
    let p = r.len().saturating_sub(1);
    let mut a = vec![0.0; p + 1];
    a[0] = 1.0;
    let mut err = r[0];
    if err <= 0.0 {
        return Err(Error::Metric("autocorrelation has no energy".into()));
    }
    for i in 1..=p {
        let acc: f64 = r[i] + (1..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let k = -acc / err;
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if err <= 0.0 || !err.is_finite() {
            return Err(Error::Metric(format!("Levinson-Durbin unstable at order {i}")));
        }
    }
    Ok(a)
}

/// `a·R·aᵀ` with `R` the Toeplitz matrix of `r`.
fn quad_form(a: &[f64], r: &[f64]) -> f64 {
    let p = a.len();
    let mut s = 0.0;
    for i in 0..p {
        for j in 0..p {
            s += a[i] * r[i.abs_diff(j)] * a[j];
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlrOutcome {
    pub value: f64,
    pub frames_used: usize,
    /// Frames skipped for a silent clean frame or unstable LPC.
    pub frames_skipped: usize,
}

/// Log-likelihood ratio with per-frame bookkeeping.
pub fn llr_detailed(clean: &AudioClip, processed: &AudioClip) -> Result<LlrOutcome> {
    let (grid, n) = segment_grid(clean, processed)?;
    let mut vals = Vec::with_capacity(n);
    let mut skipped = 0;
    for i in 0..n {
        let rc = autocorrelation(&grid.windowed(&clean.samples, i), LPC_ORDER);
        let rp = autocorrelation(&grid.windowed(&processed.samples, i), LPC_ORDER);
        let (Ok(ac), Ok(ap)) = (levinson_durbin(&rc), levinson_durbin(&rp)) else {
            skipped += 1;
            continue;
        };
        let num = quad_form(&ap, &rc);
        let den = quad_form(&ac, &rc);
        let v = (num / den).ln();
        if v.is_finite() {
            vals.push(v);
        } else {
            skipped += 1;
        }
    }
    let used = vals.len();
    let value = mean_of_best_95(vals).ok_or_else(|| Error::Metric("no frame with valid LPC".into()))?;
    Ok(LlrOutcome {
        value,
        frames_used: used,
        frames_skipped: skipped,
    })
}

/// Log-likelihood ratio averaged over the best 95% of frames.
pub fn llr(clean: &AudioClip, processed: &AudioClip) -> Result<f64> {
    Ok(llr_detailed(clean, processed)?.value)
}
