//! Central-difference gradient verification.

use std::ops::Sub;

use crate::error::{Error, Result};

/// Compares the analytic gradient of a scalar function against central
/// differences and returns the largest relative error
/// `|a − n| / max(|a|, |n|, 1e-12)` over all coordinates.
///
/// `f` returns the value and its analytic gradient at the given point. The
/// value may be carried in a wider type than `f64`; the difference
/// `f(x + eps) − f(x − eps)` is formed in that type before conversion.
pub fn grad_check<F, V>(mut f: F, x: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(V, Vec<f64>)>,
    V: Copy + Sub<Output = V>,
    f64: From<V>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-7, 1e-4]"
        )));
    }
    let (_, analytic) = f(x)?;
    if analytic.len() != x.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} inputs",
            analytic.len(),
            x.len()
        )));
    }
    let mut point = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let (plus, _) = f(&point)?;
        point[i] = orig - eps;
        let (minus, _) = f(&point)?;
        point[i] = orig;
        let numeric = f64::from(plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
