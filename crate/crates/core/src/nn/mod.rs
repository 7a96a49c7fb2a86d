//! Tensor, reverse-mode tape, layers, losses and Adam shared by both networks.

mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod weights;

pub use gradcheck::grad_check;
pub use layers::{conv1d_forward, cross_entropy, decimate, mse_loss, upsample_linear, Conv1dLayer, Linear};
pub use optim::{AdamConfig, AdamState};
pub use tape::{log_sum_exp, softmax, ConvGeom, Tape, Var};
pub use tensor::Tensor;
pub use weights::{save_weights, Module, WeightFile, WeightHeader};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic generator keyed by a seed and a textual stream label.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Sums per-sample gradient lists in order and scales by `scale`.
pub(crate) fn reduce_gradients(per_sample: Vec<Vec<Vec<f64>>>, scale: f64) -> Vec<Vec<f64>> {
    let mut iter = per_sample.into_iter();
    let Some(mut total) = iter.next() else {
        return Vec::new();
    };
    for sample in iter {
        for (acc, g) in total.iter_mut().zip(sample) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    for g in total.iter_mut() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    total
}

/// Stores `grads` on the model parameters and takes one Adam step.
pub(crate) fn apply_gradients<M: Module + ?Sized>(model: &mut M, adam: &mut AdamState, grads: Vec<Vec<f64>>) -> crate::Result<()> {
    let mut params = model.parameters_mut();
    if params.len() != grads.len() {
        return Err(crate::Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        p.set_grad(g)?;
    }
    adam.step(&mut params)
}

/// Reads the gradient of each leaf (zeros when the tape never reached it).
pub(crate) fn collect_gradients(tape: &Tape, leaves: &[Var]) -> Vec<Vec<f64>> {
    leaves
        .iter()
        .map(|&v| match tape.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(v).len()],
        })
        .collect()
}
