//! Naive double-double forward passes of both networks. They serve as the
//! numeric side of whole-network gradient checks: central differences taken
//! in this precision stay well above rounding even for gradient entries
//! near 1e-10. Each pass also reports its ReLU activation pattern so a
//! difference that straddles a kink can be recognised.

use std::collections::HashMap;

use nil_core::enhance::WaveUNet;
use nil_core::intent::IntentClassifier;
use nil_core::nn::{Module, Tensor};
use twofloat::TwoFloat as D;

type Mat = Vec<Vec<D>>;
type Params = HashMap<String, (Vec<usize>, Vec<D>)>;

fn params<M: Module>(model: &M, flat: &[f64]) -> Params {
    let mut map = HashMap::new();
    let mut at = 0;
    for (name, t) in model.named_parameters() {
        let n = t.len();
        let values = flat[at..at + n].iter().map(|&v| D::from(v)).collect();
        map.insert(name, (t.shape().to_vec(), values));
        at += n;
    }
    assert_eq!(at, flat.len(), "flat parameter length");
    map
}

fn lift(x: &[f64]) -> Vec<D> {
    x.iter().map(|&v| D::from(v)).collect()
}

/// Stride-1 convolution with length-preserving zero padding.
fn conv_same(x: &Mat, p: &Params, layer: &str, dilation: usize) -> Mat {
    let (shape, w) = &p[&format!("{layer}.weight")];
    let (_, b) = &p[&format!("{layer}.bias")];
    let (cout, cin, k) = (shape[0], shape[1], shape[2]);
    assert_eq!(cin, x.len(), "{layer} input channels");
    let t = x[0].len();
    let pad = (dilation * (k - 1) / 2) as isize;
    (0..cout)
        .map(|o| {
            (0..t)
                .map(|n| {
                    let mut acc = b[o];
                    for (i, row) in x.iter().enumerate() {
                        for j in 0..k {
                            let pos = n as isize + (j * dilation) as isize - pad;
                            if pos >= 0 && (pos as usize) < t {
                                acc += w[(o * cin + i) * k + j] * row[pos as usize];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn relu(x: Mat, pattern: &mut Vec<bool>) -> Mat {
    x.into_iter()
        .map(|r| {
            r.into_iter()
                .map(|v| {
                    pattern.push(v > 0.0);
                    if v > 0.0 {
                        v
                    } else {
                        D::from(0.0)
                    }
                })
                .collect()
        })
        .collect()
}

fn mask(mut x: Mat, valid: usize) -> Mat {
    for row in x.iter_mut() {
        for v in row.iter_mut().skip(valid) {
            *v = D::from(0.0);
        }
    }
    x
}

/// Exponential to full double-double precision: Taylor series on `x / 2^k`
/// followed by `k` squarings.
pub fn exp(x: D) -> D {
    let mut k = 0;
    let mut r = x;
    while r.hi().abs() > 1.0 / 1024.0 {
        r /= 2.0;
        k += 1;
    }
    let mut sum = D::from(1.0);
    let mut term = D::from(1.0);
    for n in 1..30 {
        term = term * r / n as f64;
        sum += term;
        if term.hi().abs() < 1e-36 {
            break;
        }
    }
    for _ in 0..k {
        sum = sum * sum;
    }
    sum
}

pub fn ln(x: D) -> D {
    let mut y = D::from(x.hi().ln());
    for _ in 0..3 {
        y += x * exp(-y) - 1.0;
    }
    y
}

/// Quotient with one Newton step on the reciprocal. The library's
/// double-double by double-double division forms its residual without a
/// fused multiply-add and is only accurate to about 1e-16.
pub fn div(a: D, b: D) -> D {
    let y0 = 1.0 / b.hi();
    let residual = 1.0 - b * y0;
    a * (D::from(y0) + residual * y0)
}

pub fn tanh(x: D) -> D {
    let e = exp(x * 2.0);
    div(e - 1.0, e + 1.0)
}

fn upsample2(x: &Mat) -> Mat {
    x.iter()
        .map(|r| {
            let mut out = Vec::with_capacity(2 * r.len());
            for i in 0..r.len() {
                let next = if i + 1 < r.len() { r[i + 1] } else { r[i] };
                out.push(r[i]);
                out.push(r[i] + (next - r[i]) * 0.5);
            }
            out
        })
        .collect()
}

/// MSE between the Wave-U-Net output for `segment` and `target`, with the
/// parameters taken from `flat` in named order.
pub fn wave_unet_loss(model: &WaveUNet, flat: &[f64], segment: &[f64], target: &[f64]) -> (D, Vec<bool>) {
    let mut pat = Vec::new();
    let p = params(model, flat);
    let depth = model.config().depth;
    let input: Mat = vec![lift(segment)];
    let mut h = input.clone();
    let mut skips = Vec::new();
    for i in 0..depth {
        let y = relu(conv_same(&h, &p, &format!("down{i}"), 1), &mut pat);
        h = y.iter().map(|r| r.iter().step_by(2).copied().collect()).collect();
        skips.push(y);
    }
    h = relu(conv_same(&h, &p, "bottleneck", 1), &mut pat);
    for i in (0..depth).rev() {
        let mut c = upsample2(&h);
        c.extend(skips[i].iter().cloned());
        h = relu(conv_same(&c, &p, &format!("up{i}"), 1), &mut pat);
    }
    h.extend(input);
    let y = conv_same(&h, &p, "output", 1);
    let mut sum = D::from(0.0);
    for (v, &t) in y[0].iter().zip(target) {
        let e = tanh(*v) - t;
        sum += e * e;
    }
    (sum / target.len() as f64, pat)
}

/// Cross-entropy of the intent classifier on `[n_mels × T]` features.
pub fn intent_loss(model: &IntentClassifier, flat: &[f64], features: &Tensor, valid: usize, class: usize) -> (D, Vec<bool>) {
    let mut pat = Vec::new();
    let p = params(model, flat);
    let config = model.config();
    let (c, t) = features.dims2().unwrap();
    let data = features.data();
    let mut x: Mat = vec![vec![D::from(0.0); t]; c];
    for ch in 0..c {
        let row = lift(&data[ch * t..ch * t + valid]);
        let mean = row.iter().fold(D::from(0.0), |a, &v| a + v) / valid as f64;
        let var = row.iter().fold(D::from(0.0), |a, &v| a + (v - mean) * (v - mean)) / valid as f64;
        if var.hi() > 1e-18 {
            let sd = var.sqrt();
            for (n, v) in row.into_iter().enumerate() {
                x[ch][n] = div(v - mean, sd);
            }
        }
    }
    let mut x = mask(conv_same(&x, &p, "input", 1), valid);
    let mut skip: Option<Mat> = None;
    let dilations = (0..config.n_stacks).flat_map(|_| config.dilations.iter().copied());
    for (b, d) in dilations.enumerate() {
        let h = mask(relu(conv_same(&x, &p, &format!("block{b}.dilated"), d), &mut pat), valid);
        for (xr, hr) in x.iter_mut().zip(&h) {
            for (a, &v) in xr.iter_mut().zip(hr) {
                *a += v;
            }
        }
        let s = mask(conv_same(&h, &p, &format!("block{b}.skip"), 1), valid);
        skip = Some(match skip {
            None => s,
            Some(mut acc) => {
                for (ar, sr) in acc.iter_mut().zip(&s) {
                    for (a, &v) in ar.iter_mut().zip(sr) {
                        *a += v;
                    }
                }
                acc
            }
        });
    }
    let y = relu(skip.unwrap_or(x), &mut pat);
    let pooled: Vec<D> = y
        .iter()
        .map(|r| r[..valid].iter().fold(D::from(0.0), |a, &v| a + v) / valid as f64)
        .collect();
    let (shape, w) = &p["head.weight"];
    let (_, bias) = &p["head.bias"];
    let logits: Vec<D> = (0..shape[0])
        .map(|k| pooled.iter().enumerate().fold(bias[k], |a, (i, &v)| a + w[k * shape[1] + i] * v))
        .collect();
    let zmax = logits.iter().fold(logits[0], |a, &v| a.max(v));
    let sum = logits.iter().fold(D::from(0.0), |a, &v| a + exp(v - zmax));
    (ln(sum) + zmax - logits[class], pat)
}
