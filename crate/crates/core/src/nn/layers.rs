use rand::Rng;

use super::tape::{ConvGeom, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// 1-D convolution over `[channels × time]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    /// `[out × in × kernel]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Conv1dLayer {
    /// Fan-in uniform initialization in `±sqrt(1/(in·kernel))`.
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel_size == 0 || stride == 0 || dilation == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv1d requires kernel, stride, dilation >= 1 (got {kernel_size}, {stride}, {dilation})"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument("conv1d channel counts must be >= 1".into()));
        }
        let bound = (1.0 / (in_channels * kernel_size) as f64).sqrt();
        let weight = Tensor::uniform(vec![out_channels, in_channels, kernel_size], bound, rng);
        let bias = Tensor::uniform(vec![out_channels], bound, rng);
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            dilation,
            padding,
            weight,
            bias,
        })
    }

    /// Stride-1 layer whose zero padding preserves the time length (odd kernels).
    pub fn same<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "same padding needs an odd kernel, got {kernel_size}"
            )));
        }
        let padding = dilation * (kernel_size - 1) / 2;
        Self::new(in_channels, out_channels, kernel_size, 1, dilation, padding, rng)
    }

    /// Builds a layer from explicit weights (bias defaults to zero when `None`).
    pub fn from_weights(weight: Tensor, bias: Option<Tensor>, stride: usize, dilation: usize, padding: usize) -> Result<Self> {
        let (out_channels, in_channels, kernel_size) = match weight.shape()[..] {
            [o, i, k] => (o, i, k),
            ref s => return Err(Error::Shape(format!("conv weight must be 3-D, got {s:?}"))),
        };
        let bias = bias.unwrap_or_else(|| Tensor::zeros(vec![out_channels]));
        if bias.shape() != [out_channels] {
            return Err(Error::Shape(format!("conv bias must be [{out_channels}]")));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            dilation,
            padding,
            weight: weight.with_requires_grad(true),
            bias: bias.with_requires_grad(true),
        })
    }

    pub fn geom(&self) -> ConvGeom {
        ConvGeom {
            kernel: self.kernel_size,
            stride: self.stride,
            dilation: self.dilation,
            padding: self.padding,
        }
    }

    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        self.geom().output_len(input_len)
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Records the convolution on `tape`; returns the output and the
    /// `(weight, bias)` leaves for gradient readback.
    pub fn apply(&self, tape: &mut Tape, input: Var) -> Result<(Var, [Var; 2])> {
        let w = tape.leaf(&self.weight);
        let b = tape.leaf(&self.bias);
        let out = tape.conv1d(input, w, b, self.geom())?;
        Ok((out, [w, b]))
    }
}

/// Affine map `[in] -> [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out × in]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = (1.0 / in_features as f64).sqrt();
        Self {
            weight: Tensor::uniform(vec![out_features, in_features], bound, rng),
            bias: Tensor::uniform(vec![out_features], bound, rng),
        }
    }

    pub fn apply(&self, tape: &mut Tape, input: Var) -> Result<(Var, [Var; 2])> {
        let w = tape.leaf(&self.weight);
        let b = tape.leaf(&self.bias);
        let out = tape.linear(input, w, b)?;
        Ok((out, [w, b]))
    }
}

fn input_var(tape: &mut Tape, input: &Tensor) -> Result<Var> {
    let (c, t) = input.dims2()?;
    tape.input(c, t, input.data().to_vec())
}

/// Forward-only convolution of a `[Cin × T]` tensor.
pub fn conv1d_forward(input: &Tensor, layer: &Conv1dLayer) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = input_var(&mut tape, input)?;
    let (y, _) = layer.apply(&mut tape, x)?;
    Ok(tape.to_tensor(y))
}

pub fn upsample_linear(input: &Tensor, factor: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = input_var(&mut tape, input)?;
    let y = tape.upsample(x, factor)?;
    Ok(tape.to_tensor(y))
}

pub fn decimate(input: &Tensor, factor: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = input_var(&mut tape, input)?;
    let y = tape.decimate(x, factor)?;
    Ok(tape.to_tensor(y))
}

pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

pub fn cross_entropy(logits: &[f64], true_class: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.leaf(&Tensor::vector(logits.to_vec()));
    let loss = tape.cross_entropy(z, true_class)?;
    Ok(tape.scalar(loss))
}
