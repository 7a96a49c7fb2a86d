//! Dynamic reverse-mode tape.
//!
//! Every forward op appends a node holding its value and enough context to
//! propagate gradients; [`Tape::backward`] walks the nodes in reverse. Values
//! are `[channels × time]` matrices unless an op says otherwise.

use super::gemm::{gemm, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = input_len + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    Tanh(Var),
    Add(Var, Var),
    Decimate {
        input: Var,
        factor: usize,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Concat(Var, Var),
    MaskTime {
        input: Var,
        valid: usize,
    },
    Normalize {
        input: Var,
        valid: usize,
        inv_std: Vec<f64>,
    },
    MeanPool {
        input: Var,
        valid: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        class: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor as a leaf; it receives gradients iff it requires them.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Records a constant 2-D input.
    pub fn input(&mut self, channels: usize, len: usize, data: Vec<f64>) -> Result<Var> {
        if channels * len != data.len() {
            return Err(Error::Shape(format!(
                "input of {} values cannot be viewed as {}×{}",
                data.len(),
                channels,
                len
            )));
        }
        Ok(self.push(vec![channels, len], data, Op::Leaf, false))
    }

    /// Records a leaf whose gradient is tracked (e.g. for input sensitivity checks).
    pub fn tracked_input(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?.with_requires_grad(true);
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
            .expect("node shape is consistent")
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape[..] {
            [c, t] => Ok((c, t)),
            ref s => Err(Error::Shape(format!("{what}: expected [channels × time], got {s:?}"))),
        }
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeom) -> Result<Var> {
        if geom.kernel == 0 || geom.stride == 0 || geom.dilation == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv1d requires kernel, stride and dilation >= 1, got {geom:?}"
            )));
        }
        let (cin, tin) = self.dims2(input, "conv1d input")?;
        let wshape = self.nodes[weight.0].shape.clone();
        let (cout, wcin, k) = match wshape[..] {
            [o, i, k] => (o, i, k),
            _ => {
                return Err(Error::Shape(format!(
                    "conv1d weight must be [out × in × kernel], got {wshape:?}"
                )))
            }
        };
        if wcin != cin {
            return Err(Error::Shape(format!(
                "conv1d in_channels: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if k != geom.kernel {
            return Err(Error::Shape(format!(
                "conv1d kernel: weight has {k} taps, geometry says {}",
                geom.kernel
            )));
        }
        if self.nodes[bias.0].shape[..] != [cout] {
            return Err(Error::Shape(format!(
                "conv1d bias must be [{cout}], got {:?}",
                self.nodes[bias.0].shape
            )));
        }
        let tout = geom.output_len(tin).ok_or_else(|| {
            Error::Shape(format!(
                "conv1d time: input length {tin} too short for kernel {} dilation {} padding {}",
                geom.kernel, geom.dilation, geom.padding
            ))
        })?;
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        let b = &self.nodes[bias.0].value;
        let mut out = vec![0.0; cout * tout];
        for (o, row) in out.chunks_exact_mut(tout).enumerate() {
            row.fill(b[o]);
        }
        let w_mat = MatRef::row_major(w, cout, cin * k);
        if is_pointwise(&geom) {
            gemm(w_mat, MatRef::row_major(x, cin, tin), 1.0, &mut out);
        } else {
            let cols = im2col(x, cin, tin, &geom, tout);
            gemm(w_mat, MatRef::row_major(&cols, cin * k, tout), 1.0, &mut out);
        }
        let needs = self.needs(&[input, weight, bias]);
        Ok(self.push(
            vec![cout, tout],
            out,
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push(shape, value, Op::Relu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push(shape, value, Op::Tanh(x), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(&[a, b]);
        Ok(self.push(shape, value, Op::Add(a, b), needs))
    }

    /// Keeps every `factor`-th sample starting at index 0.
    pub fn decimate(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::InvalidArgument("decimation factor must be >= 1".into()));
        }
        let (c, t) = self.dims2(input, "decimate")?;
        let tout = t.div_ceil(factor);
        let x = &self.nodes[input.0].value;
        let mut out = Vec::with_capacity(c * tout);
        for row in x.chunks_exact(t.max(1)).take(c) {
            out.extend(row.iter().step_by(factor));
        }
        let needs = self.needs(&[input]);
        Ok(self.push(vec![c, tout], out, Op::Decimate { input, factor }, needs))
    }

    /// Linear interpolation by an integer factor; the last segment holds the final value.
    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsampling factor must be >= 1".into()));
        }
        let (c, t) = self.dims2(input, "upsample")?;
        let tout = t * factor;
        let x = &self.nodes[input.0].value;
        let mut out = vec![0.0; c * tout];
        for ch in 0..c {
            let src = &x[ch * t..(ch + 1) * t];
            let dst = &mut out[ch * tout..(ch + 1) * tout];
            for i in 0..t {
                let next = if i + 1 < t { src[i + 1] } else { src[i] };
                for j in 0..factor {
                    let frac = j as f64 / factor as f64;
                    dst[i * factor + j] = src[i] + (next - src[i]) * frac;
                }
            }
        }
        let needs = self.needs(&[input]);
        Ok(self.push(vec![c, tout], out, Op::Upsample { input, factor }, needs))
    }

    /// Stacks `a` above `b` along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ta) = self.dims2(a, "concat lhs")?;
        let (cb, tb) = self.dims2(b, "concat rhs")?;
        if ta != tb {
            return Err(Error::Shape(format!("concat: time lengths {ta} vs {tb}")));
        }
        let mut value = self.nodes[a.0].value.clone();
        value.extend_from_slice(&self.nodes[b.0].value);
        let needs = self.needs(&[a, b]);
        Ok(self.push(vec![ca + cb, ta], value, Op::Concat(a, b), needs))
    }

    /// Zeroes every time step at or beyond `valid`.
    pub fn mask_time(&mut self, input: Var, valid: usize) -> Result<Var> {
        let (c, t) = self.dims2(input, "mask_time")?;
        let mut value = self.nodes[input.0].value.clone();
        if valid < t {
            for row in value.chunks_exact_mut(t).take(c) {
                row[valid..].fill(0.0);
            }
        }
        let needs = self.needs(&[input]);
        Ok(self.push(vec![c, t], value, Op::MaskTime { input, valid }, needs))
    }

    /// Per-channel zero-mean unit-variance normalization over the first
    /// `valid` steps; padded steps and constant channels map to zero.
    pub fn normalize_channels(&mut self, input: Var, valid: usize) -> Result<Var> {
        let (c, t) = self.dims2(input, "normalize")?;
        if valid == 0 || valid > t {
            return Err(Error::InvalidArgument(format!(
                "normalize: valid length {valid} outside 1..={t}"
            )));
        }
        let x = &self.nodes[input.0].value;
        let mut value = vec![0.0; c * t];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let row = &x[ch * t..ch * t + valid];
            let mean = row.iter().sum::<f64>() / valid as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / valid as f64;
            if var > ZERO_VARIANCE {
                let s = 1.0 / var.sqrt();
                inv_std[ch] = s;
                for (o, v) in value[ch * t..ch * t + valid].iter_mut().zip(row) {
                    *o = (v - mean) * s;
                }
            }
        }
        let needs = self.needs(&[input]);
        Ok(self.push(
            vec![c, t],
            value,
            Op::Normalize {
                input,
                valid,
                inv_std,
            },
            needs,
        ))
    }

    /// Mean over the first `valid` time steps: `[C × T] -> [C]`.
    pub fn mean_pool(&mut self, input: Var, valid: usize) -> Result<Var> {
        let (c, t) = self.dims2(input, "mean_pool")?;
        if valid == 0 || valid > t {
            return Err(Error::InvalidArgument(format!(
                "mean_pool: valid length {valid} outside 1..={t}"
            )));
        }
        let x = &self.nodes[input.0].value;
        let value = (0..c)
            .map(|ch| x[ch * t..ch * t + valid].iter().sum::<f64>() / valid as f64)
            .collect();
        let needs = self.needs(&[input]);
        Ok(self.push(vec![c], value, Op::MeanPool { input, valid }, needs))
    }

    /// Affine map `[C] -> [K]` with weight `[K × C]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let c = match self.nodes[input.0].shape[..] {
            [c] => c,
            ref s => return Err(Error::Shape(format!("linear input must be 1-D, got {s:?}"))),
        };
        let (k, wc) = match self.nodes[weight.0].shape[..] {
            [k, wc] => (k, wc),
            ref s => return Err(Error::Shape(format!("linear weight must be 2-D, got {s:?}"))),
        };
        if wc != c {
            return Err(Error::Shape(format!("linear: input has {c} features, weight expects {wc}")));
        }
        if self.nodes[bias.0].shape[..] != [k] {
            return Err(Error::Shape(format!("linear bias must be [{k}]")));
        }
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        let b = &self.nodes[bias.0].value;
        let value = (0..k)
            .map(|i| b[i] + w[i * c..(i + 1) * c].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let needs = self.needs(&[input, weight, bias]);
        Ok(self.push(
            vec![k],
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            needs,
        ))
    }

    pub fn mse(&mut self, pred: Var, target: &[f64], target_shape: &[usize]) -> Result<Var> {
        if self.nodes[pred.0].shape != target_shape {
            return Err(Error::Shape(format!(
                "mse: prediction {:?} vs target {:?}",
                self.nodes[pred.0].shape, target_shape
            )));
        }
        let p = &self.nodes[pred.0].value;
        let n = p.len().max(1) as f64;
        let loss = p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let needs = self.needs(&[pred]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            needs,
        ))
    }

    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var> {
        let z = &self.nodes[logits.0].value;
        if self.nodes[logits.0].shape.len() != 1 {
            return Err(Error::Shape(format!(
                "cross_entropy expects 1-D logits, got {:?}",
                self.nodes[logits.0].shape
            )));
        }
        if class >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "class index {class} out of range for {} logits",
                z.len()
            )));
        }
        let probs = softmax(z);
        let loss = log_sum_exp(z) - z[class];
        let needs = self.needs(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                class,
                probs,
            },
            needs,
        ))
    }

    /// Reverse accumulation from a scalar node (seed gradient 1).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Shape("backward requires a scalar loss".into()));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].shape.iter().product();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // The op is moved out temporarily so parents can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            } => self.conv1d_backward(i, *input, *weight, *bias, geom, g),
            Op::Relu(x) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                if let Some(dx) = self.acc(*x) {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(&y) {
                        if *yi > 0.0 {
                            *d += gi;
                        }
                    }
                }
                self.nodes[i].value = y;
            }
            Op::Tanh(x) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                if let Some(dx) = self.acc(*x) {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(&y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
                self.nodes[i].value = y;
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(v) {
                        d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                    }
                }
            }
            Op::Decimate { input, factor } => {
                let t = self.nodes[input.0].shape[1];
                let tout = self.nodes[i].shape[1];
                if let Some(dx) = self.acc(*input) {
                    for (dst, src) in dx.chunks_exact_mut(t).zip(g.chunks_exact(tout)) {
                        for (j, gi) in src.iter().enumerate() {
                            dst[j * factor] += gi;
                        }
                    }
                }
            }
            Op::Upsample { input, factor } => {
                let t = self.nodes[input.0].shape[1];
                let f = *factor;
                if let Some(dx) = self.acc(*input) {
                    for (dst, src) in dx.chunks_exact_mut(t).zip(g.chunks_exact(t * f)) {
                        for k in 0..t {
                            for j in 0..f {
                                let gi = src[k * f + j];
                                if k + 1 < t {
                                    let frac = j as f64 / f as f64;
                                    dst[k] += gi * (1.0 - frac);
                                    dst[k + 1] += gi * frac;
                                } else {
                                    dst[k] += gi;
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let na = self.nodes[a.0].value.len();
                if let Some(d) = self.acc(*a) {
                    d.iter_mut().zip(&g[..na]).for_each(|(d, gi)| *d += gi);
                }
                if let Some(d) = self.acc(*b) {
                    d.iter_mut().zip(&g[na..]).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::MaskTime { input, valid } => {
                let t = self.nodes[i].shape[1];
                let valid = (*valid).min(t);
                if let Some(dx) = self.acc(*input) {
                    for (dst, src) in dx.chunks_exact_mut(t).zip(g.chunks_exact(t)) {
                        dst[..valid].iter_mut().zip(&src[..valid]).for_each(|(d, gi)| *d += gi);
                    }
                }
            }
            Op::Normalize {
                input,
                valid,
                inv_std,
            } => {
                let t = self.nodes[i].shape[1];
                let valid = *valid;
                let y = std::mem::take(&mut self.nodes[i].value);
                if let Some(dx) = self.acc(*input) {
                    for (ch, s) in inv_std.iter().enumerate() {
                        if *s == 0.0 {
                            continue;
                        }
                        let gr = &g[ch * t..ch * t + valid];
                        let yr = &y[ch * t..ch * t + valid];
                        let n = valid as f64;
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((d, gi), yi) in dx[ch * t..ch * t + valid].iter_mut().zip(gr).zip(yr) {
                            *d += s * (gi - g_mean - yi * gy_mean);
                        }
                    }
                }
                self.nodes[i].value = y;
            }
            Op::MeanPool { input, valid } => {
                let t = self.nodes[input.0].shape[1];
                let valid = *valid;
                if let Some(dx) = self.acc(*input) {
                    for (dst, gi) in dx.chunks_exact_mut(t).zip(g) {
                        let share = gi / valid as f64;
                        dst[..valid].iter_mut().for_each(|d| *d += share);
                    }
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let c = self.nodes[input.0].value.len();
                if self.nodes[weight.0].needs_grad {
                    let x = std::mem::take(&mut self.nodes[input.0].value);
                    if let Some(dw) = self.acc(*weight) {
                        for (row, gi) in dw.chunks_exact_mut(c).zip(g) {
                            row.iter_mut().zip(&x).for_each(|(d, xi)| *d += gi * xi);
                        }
                    }
                    self.nodes[input.0].value = x;
                }
                if let Some(db) = self.acc(*bias) {
                    db.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
                if self.nodes[input.0].needs_grad {
                    let w = std::mem::take(&mut self.nodes[weight.0].value);
                    if let Some(dx) = self.acc(*input) {
                        for (row, gi) in w.chunks_exact(c).zip(g) {
                            dx.iter_mut().zip(row).for_each(|(d, wi)| *d += gi * wi);
                        }
                    }
                    self.nodes[weight.0].value = w;
                }
            }
            Op::Mse { pred, target } => {
                let p = std::mem::take(&mut self.nodes[pred.0].value);
                let scale = 2.0 * g[0] / p.len().max(1) as f64;
                if let Some(d) = self.acc(*pred) {
                    for ((d, pi), ti) in d.iter_mut().zip(&p).zip(target) {
                        *d += scale * (pi - ti);
                    }
                }
                self.nodes[pred.0].value = p;
            }
            Op::CrossEntropy {
                logits,
                class,
                probs,
            } => {
                if let Some(d) = self.acc(*logits) {
                    for (k, (d, p)) in d.iter_mut().zip(probs).enumerate() {
                        let onehot = if k == *class { 1.0 } else { 0.0 };
                        *d += g[0] * (p - onehot);
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }

    fn conv1d_backward(
        &mut self,
        i: usize,
        input: Var,
        weight: Var,
        bias: Var,
        geom: &ConvGeom,
        g: &[f64],
    ) {
        let (cout, tout) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
        let (cin, tin) = (self.nodes[input.0].shape[0], self.nodes[input.0].shape[1]);
        let k = geom.kernel;
        let g_mat = MatRef::row_major(g, cout, tout);

        if let Some(db) = self.acc(bias) {
            for (d, row) in db.iter_mut().zip(g.chunks_exact(tout)) {
                *d += row.iter().sum::<f64>();
            }
        }

        if self.nodes[weight.0].needs_grad {
            let x = std::mem::take(&mut self.nodes[input.0].value);
            let cols;
            let cols_ref = if is_pointwise(geom) {
                &x[..]
            } else {
                cols = im2col(&x, cin, tin, geom, tout);
                &cols[..]
            };
            let dw = self.acc(weight).expect("weight needs grad");
            gemm(
                g_mat,
                MatRef::row_major(cols_ref, cin * k, tout).transposed(),
                1.0,
                dw,
            );
            self.nodes[input.0].value = x;
        }

        if self.nodes[input.0].needs_grad {
            let w = std::mem::take(&mut self.nodes[weight.0].value);
            let w_t = MatRef::row_major(&w, cout, cin * k).transposed();
            let dx = self.acc(input).expect("input needs grad");
            if is_pointwise(geom) {
                gemm(w_t, g_mat, 1.0, dx);
            } else {
                let mut dcols = vec![0.0; cin * k * tout];
                gemm(w_t, g_mat, 0.0, &mut dcols);
                col2im_add(&dcols, cin, tin, geom, tout, dx);
            }
            self.nodes[weight.0].value = w;
        }
    }
}

/// Channels with variance at or below this are treated as constant.
pub(crate) const ZERO_VARIANCE: f64 = 1e-18;

fn is_pointwise(geom: &ConvGeom) -> bool {
    geom.kernel == 1 && geom.stride == 1 && geom.padding == 0
}

/// Valid output positions `t` for which `t*stride + offset` lands in `[0, tin)`.
fn tap_range(offset: isize, stride: usize, tin: usize, tout: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (((-offset) + s - 1) / s).min(tout as isize) };
    let hi = if (tin as isize) <= offset {
        0
    } else {
        ((tin as isize - offset - 1) / s + 1).min(tout as isize)
    };
    (lo as usize, (hi.max(lo)) as usize)
}

fn im2col(x: &[f64], cin: usize, tin: usize, geom: &ConvGeom, tout: usize) -> Vec<f64> {
    let k = geom.kernel;
    let mut cols = vec![0.0; cin * k * tout];
    for c in 0..cin {
        let src = &x[c * tin..(c + 1) * tin];
        for tap in 0..k {
            let offset = (tap * geom.dilation) as isize - geom.padding as isize;
            let (lo, hi) = tap_range(offset, geom.stride, tin, tout);
            if hi <= lo {
                continue;
            }
            let dst = &mut cols[(c * k + tap) * tout..(c * k + tap + 1) * tout];
            if geom.stride == 1 {
                let start = (lo as isize + offset) as usize;
                dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
            } else {
                for t in lo..hi {
                    dst[t] = src[(t as isize * geom.stride as isize + offset) as usize];
                }
            }
        }
    }
    cols
}

fn col2im_add(dcols: &[f64], cin: usize, tin: usize, geom: &ConvGeom, tout: usize, dx: &mut [f64]) {
    let k = geom.kernel;
    for c in 0..cin {
        let dst = &mut dx[c * tin..(c + 1) * tin];
        for tap in 0..k {
            let offset = (tap * geom.dilation) as isize - geom.padding as isize;
            let (lo, hi) = tap_range(offset, geom.stride, tin, tout);
            let src = &dcols[(c * k + tap) * tout..(c * k + tap + 1) * tout];
            for t in lo..hi {
                let idx = (t as isize * geom.stride as isize + offset) as usize;
                dst[idx] += src[t];
            }
        }
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
