//! Shared oracles for the integration tests.

#![allow(dead_code)]

pub mod reference;

use nil_core::nn::{grad_check, Tape, Var};
use nil_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(seed: u64, n: usize, bound: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Central-difference check of one tape operation with respect to all of its
/// inputs. Non-scalar outputs are reduced by MSE against a seeded target.
pub fn check_op<F>(seed: u64, shapes: &[Vec<usize>], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let total: usize = sizes.iter().sum();
    let x0 = uniform(seed, total, 1.0);
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let mut vars = Vec::new();
        let mut at = 0;
        for (shape, &n) in shapes.iter().zip(&sizes) {
            vars.push(tape.tracked_input(shape.clone(), x[at..at + n].to_vec())?);
            at += n;
        }
        let mut out = build(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            let shape = tape.shape(out).to_vec();
            let target = uniform(seed ^ 0x5eed, tape.value(out).len(), 1.0);
            out = tape.mse(out, &target, &shape)?;
        }
        tape.backward(out)?;
        let mut grads = Vec::with_capacity(total);
        for (&v, &n) in vars.iter().zip(&sizes) {
            match tape.grad(v) {
                Some(g) => grads.extend_from_slice(g),
                None => grads.extend(std::iter::repeat_n(0.0, n)),
            }
        }
        Ok((tape.scalar(out), grads))
    };
    grad_check(eval, &x0, 1e-6).expect("gradient check runs")
}

use nil_core::enhance::{WaveUNet, WaveUNetConfig};
use nil_core::intent::{ClassifierConfig, IntentClassifier, IntentLabel, LabelMap};
use nil_core::nn::{ConvGeom, Module, Tensor};

pub const GRADIENT_SEEDS: std::ops::Range<u64> = 0..10;

/// Worst relative error of each tape operation for one seed.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let geom = ConvGeom { kernel: 3, stride: 1, dilation: 1, padding: 1 };
    let strided = ConvGeom { kernel: 3, stride: 2, dilation: 2, padding: 2 };
    vec![
        ("conv1d", check_op(seed, &[vec![2, 9], vec![3, 2, 3], vec![3]], |t, v| t.conv1d(v[0], v[1], v[2], geom))),
        ("conv1d strided dilated", check_op(seed, &[vec![2, 11], vec![3, 2, 3], vec![3]], |t, v| {
            t.conv1d(v[0], v[1], v[2], strided)
        })),
        ("relu", check_op(seed, &[vec![3, 7]], |t, v| Ok(t.relu(v[0])))),
        ("tanh", check_op(seed, &[vec![3, 7]], |t, v| Ok(t.tanh(v[0])))),
        ("add", check_op(seed, &[vec![2, 5], vec![2, 5]], |t, v| t.add(v[0], v[1]))),
        ("decimate", check_op(seed, &[vec![2, 9]], |t, v| t.decimate(v[0], 2))),
        ("upsample", check_op(seed, &[vec![2, 5]], |t, v| t.upsample(v[0], 2))),
        ("concat", check_op(seed, &[vec![2, 6], vec![1, 6]], |t, v| t.concat(v[0], v[1]))),
        ("mask_time", check_op(seed, &[vec![2, 8]], |t, v| t.mask_time(v[0], 5))),
        ("normalize_channels", check_op(seed, &[vec![3, 8]], |t, v| t.normalize_channels(v[0], 6))),
        ("mean_pool", check_op(seed, &[vec![3, 8]], |t, v| t.mean_pool(v[0], 6))),
        ("linear", check_op(seed, &[vec![4], vec![3, 4], vec![3]], |t, v| t.linear(v[0], v[1], v[2]))),
        ("mse", check_op(seed, &[vec![2, 6]], |t, v| t.mse(v[0], &uniform(seed + 1, 12, 1.0), &[2, 6]))),
        ("cross_entropy", check_op(seed, &[vec![5]], |t, v| t.cross_entropy(v[0], (seed % 5) as usize))),
    ]
}

pub fn small_wave_unet() -> WaveUNetConfig {
    WaveUNetConfig { depth: 2, base_filters: 2, growth_per_level: 2, kernel_down: 15, kernel_up: 5, input_len: 32 }
}

pub fn small_classifier(k: usize) -> ClassifierConfig {
    ClassifierConfig {
        bottleneck_channels: 4,
        n_stacks: 2,
        blocks_per_stack: 2,
        dilations: vec![1, 2],
        ..ClassifierConfig::paper(k)
    }
}

pub fn toy_labels(k: usize) -> LabelMap {
    LabelMap::from_labels((0..k).map(|i| IntentLabel::new("activate", &format!("object{i}"), "none"))).unwrap()
}

/// Outcome of a whole-network check.
#[derive(Debug, Clone, Copy)]
pub struct NetworkCheck {
    pub max_rel_error: f64,
    /// Coordinates whose ±eps evaluations change a ReLU activation; the
    /// central difference there straddles a kink and is not compared.
    pub straddled: usize,
    pub checked: usize,
}

const NETWORK_EPS: f64 = 1e-6;

fn network_check<F>(x0: &[f64], analytic: &[f64], f: F) -> NetworkCheck
where
    F: Fn(&[f64]) -> (twofloat::TwoFloat, Vec<bool>),
{
    assert_eq!(x0.len(), analytic.len());
    let (_, base) = f(x0);
    let mut p = x0.to_vec();
    let mut out = NetworkCheck { max_rel_error: 0.0, straddled: 0, checked: 0 };
    for i in 0..x0.len() {
        p[i] = x0[i] + NETWORK_EPS;
        let (plus, pat_plus) = f(&p);
        p[i] = x0[i] - NETWORK_EPS;
        let (minus, pat_minus) = f(&p);
        p[i] = x0[i];
        if pat_plus != base || pat_minus != base {
            out.straddled += 1;
            continue;
        }
        let numeric = f64::from(plus - minus) / (2.0 * NETWORK_EPS);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.checked += 1;
    }
    out
}

/// Analytic tape gradient of the Wave-U-Net MSE against central differences
/// of the double-double reference forward pass.
pub fn wave_unet_gradient_check(config: &WaveUNetConfig, seed: u64) -> NetworkCheck {
    let model = WaveUNet::build(config.clone(), seed).unwrap();
    let n = config.input_len;
    let x = uniform(seed + 100, n, 1.0);
    let target = uniform(seed + 200, n, 1.0);
    let (_, analytic) = model.loss_and_gradients(&x, &target).unwrap();
    network_check(&model.flat_parameters(), &analytic.concat(), |p| {
        reference::wave_unet_loss(&model, p, &x, &target)
    })
}

/// Same check for the intent classifier's cross-entropy.
pub fn intent_gradient_check(config: &ClassifierConfig, seed: u64) -> NetworkCheck {
    let k = config.n_classes;
    let model = IntentClassifier::build(config.clone(), toy_labels(k), seed).unwrap();
    let (t, valid) = (14, 11);
    let features = Tensor::matrix(config.n_mels, t, uniform(seed + 300, config.n_mels * t, 3.0)).unwrap();
    let class = (seed as usize) % k;
    let (_, _, analytic) = model.loss_and_gradients(&features, valid, class).unwrap();
    network_check(&model.flat_parameters(), &analytic.concat(), |p| {
        reference::intent_loss(&model, p, &features, valid, class)
    })
}

use nil_core::signal::AudioClip;

pub const RATE: u32 = 16000;

/// Speech-like test signal: syllable-rate bursts of a gliding harmonic
/// complex over a faint floor.
pub fn voiced(seed: u64, secs: f64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * RATE as f64) as usize;
    let f0 = rng.gen_range(110.0..220.0);
    let syllable = rng.gen_range(3.0..5.0);
    let phases: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / RATE as f64;
            let f = f0 * (1.0 + 0.1 * (std::f64::consts::TAU * 0.7 * t).sin());
            let env = (std::f64::consts::PI * syllable * t).sin().powi(2);
            let mut v = 0.0;
            for (h, ph) in phases.iter().enumerate() {
                let fh = f * (h + 1) as f64;
                if fh < 7000.0 {
                    v += (std::f64::consts::TAU * fh * t + ph).sin() / (h + 1) as f64;
                }
            }
            0.2 * env * v + rng.gen_range(-1e-3..1e-3)
        })
        .collect();
    AudioClip::new(samples, RATE).unwrap()
}

pub fn white(seed: u64, secs: f64, amp: f64) -> AudioClip {
    let n = (secs * RATE as f64) as usize;
    AudioClip::new(uniform(seed, n, amp), RATE).unwrap()
}
