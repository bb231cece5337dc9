//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Tape`] records one forward computation as an append-only list of
//! nodes; node ids are already a topological order, so backward is a single
//! reverse sweep that visits each node once. Leaves either borrow their
//! tensors from the caller (parameters, inputs) or own them (sampled noise),
//! which keeps per-pass setup cheap in the training loop.
//!
//! Tapes are single-threaded; run one tape per worker and variables never
//! cross tapes. All accumulation happens in node-index order, so identical
//! inputs give bitwise-identical gradients.

use std::borrow::Cow;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("backward expects a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward has already run on this tape")]
    BackwardAlreadyRun,
    #[error("convolution yields non-positive output extent: input {input:?}, kernel {kernel}, stride {stride}, padding {padding}")]
    BadConvGeometry {
        input: Vec<usize>,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("output padding {output_padding} must be smaller than stride {stride}")]
    BadOutputPadding { output_padding: usize, stride: usize },
    #[error("crop {target:?} exceeds input {input:?}")]
    BadCrop { input: Vec<usize>, target: Vec<usize> },
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    None,
}

/// Diagonal Gaussian over a latent (sub)space: mean and log-variance
/// vectors living on the tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLatent {
    pub mu: Var,
    pub log_var: Var,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    MatVec { w: Var, x: Var },
    MatMul { a: Var, b: Var },
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    SumAll(Var),
    MeanAll(Var),
    Mse { pred: Var, target: Var },
    KlStdNormal { mu: Var, log_var: Var },
    Reparam { mu: Var, log_var: Var, eps: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, mean: f64, inv_std: f64 },
    Conv2d { x: Var, kernels: Var, stride: usize, padding: usize },
    ConvTranspose2d { x: Var, kernels: Var, stride: usize, padding: usize },
    CenterCrop { x: Var, off_h: usize, off_w: usize },
    Reshape { x: Var },
    ChannelBias { x: Var, bias: Var },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Tensor>>,
    spent: bool,
}

impl<'a> Default for Tape<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            spent: false,
        }
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient ever flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Borrowed constant leaf.
    pub fn input(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Borrowed differentiable leaf (a trainable parameter).
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- elementwise & linear ops -------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Cow::Owned(v), Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Cow::Owned(v), Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).mul(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Cow::Owned(v), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let rg = self.requires(a);
        self.push(Cow::Owned(v), Op::Scale(a, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).tanh();
        let rg = self.requires(a);
        self.push(Cow::Owned(v), Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).relu();
        let rg = self.requires(a);
        self.push(Cow::Owned(v), Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        let rg = self.requires(a);
        self.push(Cow::Owned(v), Op::Exp(a), rg)
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(w).matvec(self.value(x))?;
        let rg = self.requires(w) || self.requires(x);
        Ok(self.push(Cow::Owned(v), Op::MatVec { w, x }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Cow::Owned(v), Op::MatMul { a, b }, rg))
    }

    /// Concatenate rank-1 tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(TensorError::RankMismatch {
                    op: "concat",
                    expected: 1,
                    shape: t.shape().to_vec(),
                }
                .into());
            }
            data.extend_from_slice(t.data());
            rg |= self.requires(p);
        }
        let v = Tensor::from_vec(data);
        Ok(self.push(Cow::Owned(v), Op::Concat(parts.to_vec()), rg))
    }

    /// Contiguous slice `[start, start+len)` of a rank-1 tensor.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let t = self.value(src);
        if t.rank() != 1 || start + len > t.len() {
            return Err(TensorError::ShapeMismatch {
                op: "slice",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            }
            .into());
        }
        let v = Tensor::from_vec(t.data()[start..start + len].to_vec());
        let rg = self.requires(src);
        Ok(self.push(Cow::Owned(v), Op::Slice { src, start }, rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.requires(a);
        self.push(Cow::Owned(v), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        let rg = self.requires(a);
        self.push(Cow::Owned(v), Op::MeanAll(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let v = self.value(a).reshape(shape)?;
        let rg = self.requires(a);
        Ok(self.push(Cow::Owned(v), Op::Reshape { x: a }, rg))
    }

    // ---- composite layers ----------------------------------------------

    /// `activation(w x + b)`.
    pub fn dense(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        activation: Activation,
    ) -> Result<Var, AutodiffError> {
        let wx = self.matvec(w, x)?;
        let z = self.add(wx, b)?;
        Ok(match activation {
            Activation::Tanh => self.tanh(z),
            Activation::Relu => self.relu(z),
            Activation::None => z,
        })
    }

    /// `(x - mean(x)) / sqrt(var(x) + eps) * gain + bias` over a rank-1 input.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.shape() != self.value(gain).shape() || xv.shape() != self.value(bias).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: self.value(gain).shape().to_vec(),
            }
            .into());
        }
        let mean = xv.mean();
        let var = xv.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / xv.len() as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        let out: Vec<f64> = xv
            .data()
            .iter()
            .zip(self.value(gain).data())
            .zip(self.value(bias).data())
            .map(|((&v, &g), &b)| (v - mean) * inv_std * g + b)
            .collect();
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        Ok(self.push(
            Cow::Owned(Tensor::from_vec(out)),
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                inv_std,
            },
            rg,
        ))
    }

    /// Closed-form KL(N(mu, diag(exp(log_var))) || N(0, I)), a scalar.
    pub fn kl_to_standard_normal(&mut self, q: GaussianLatent) -> Result<Var, AutodiffError> {
        let mu = self.value(q.mu);
        let lv = self.value(q.log_var);
        if mu.shape() != lv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "kl_to_standard_normal",
                lhs: mu.shape().to_vec(),
                rhs: lv.shape().to_vec(),
            }
            .into());
        }
        let kl = 0.5
            * mu.data()
                .iter()
                .zip(lv.data())
                .map(|(&m, &l)| m * m + l.exp() - l - 1.0)
                .sum::<f64>();
        let rg = self.requires(q.mu) || self.requires(q.log_var);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(kl)),
            Op::KlStdNormal {
                mu: q.mu,
                log_var: q.log_var,
            },
            rg,
        ))
    }

    /// `z = mu + exp(log_var / 2) * eps`; gradients reach `mu` and
    /// `log_var` but never `eps`.
    pub fn reparameterize(&mut self, q: GaussianLatent, eps: Var) -> Result<Var, AutodiffError> {
        let mu = self.value(q.mu);
        let lv = self.value(q.log_var);
        let ev = self.value(eps);
        if mu.shape() != lv.shape() || mu.shape() != ev.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "reparameterize",
                lhs: mu.shape().to_vec(),
                rhs: ev.shape().to_vec(),
            }
            .into());
        }
        let z: Vec<f64> = mu
            .data()
            .iter()
            .zip(lv.data())
            .zip(ev.data())
            .map(|((&m, &l), &e)| m + (0.5 * l).exp() * e)
            .collect();
        let rg = self.requires(q.mu) || self.requires(q.log_var);
        Ok(self.push(
            Cow::Owned(Tensor::from_vec(z)),
            Op::Reparam {
                mu: q.mu,
                log_var: q.log_var,
                eps,
            },
            rg,
        ))
    }

    /// Mean squared error between a prediction and a target, a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, AutodiffError> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                lhs: p.shape().to_vec(),
                rhs: t.shape().to_vec(),
            }
            .into());
        }
        let n = p.len() as f64;
        let v = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.requires(pred) || self.requires(target);
        Ok(self.push(Cow::Owned(Tensor::scalar(v)), Op::Mse { pred, target }, rg))
    }

    // ---- convolutions ---------------------------------------------------

    /// 2-D cross-correlation: `x [C,H,W]`, `kernels [F,C,k,k]`, zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernels: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, AutodiffError> {
        let (xs, ks) = (self.value(x).shape().to_vec(), self.value(kernels).shape().to_vec());
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || ks[2] != ks[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ks,
            }
            .into());
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (f, k) = (ks[0], ks[2]);
        let (oh, ow) = conv_out(h, w, k, stride, padding).ok_or(AutodiffError::BadConvGeometry {
            input: xs.clone(),
            kernel: k,
            stride,
            padding,
        })?;
        let xv = self.value(x).data();
        let kv = self.value(kernels).data();
        // out[f, pos] = K[f, c*k*k] . cols[c*k*k, pos]
        let cols = im2col(xv, c, h, w, k, stride, padding, oh, ow);
        let mut out = vec![0.0; f * oh * ow];
        gemm_nn(f, c * k * k, oh * ow, kv, &cols, &mut out);
        let rg = self.requires(x) || self.requires(kernels);
        Ok(self.push(
            Cow::Owned(Tensor::new(vec![f, oh, ow], out)?),
            Op::Conv2d {
                x,
                kernels,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Transposed 2-D convolution (the adjoint of [`Tape::conv2d`] with the
    /// same stride/padding): `x [C,H,W]`, `kernels [C,F,k,k]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        kernels: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var, AutodiffError> {
        let (xs, ks) = (self.value(x).shape().to_vec(), self.value(kernels).shape().to_vec());
        if xs.len() != 3 || ks.len() != 4 || ks[0] != xs[0] || ks[2] != ks[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: xs,
                rhs: ks,
            }
            .into());
        }
        if output_padding >= stride {
            return Err(AutodiffError::BadOutputPadding {
                output_padding,
                stride,
            });
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (f, k) = (ks[1], ks[2]);
        let oh = ((h - 1) * stride + k + output_padding).checked_sub(2 * padding);
        let ow = ((w - 1) * stride + k + output_padding).checked_sub(2 * padding);
        let (oh, ow) = match (oh, ow) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
            _ => {
                return Err(AutodiffError::BadConvGeometry {
                    input: xs.clone(),
                    kernel: k,
                    stride,
                    padding,
                })
            }
        };
        let xv = self.value(x).data();
        let kv = self.value(kernels).data();
        // P[(f,u,v), pos over input] = K[c, f*k*k]^T . x[c, pos], then
        // scatter the patch rows into the larger output lattice.
        let patch = f * k * k;
        let mut p_mat = vec![0.0; patch * h * w];
        gemm_tn(patch, c, h * w, kv, xv, &mut p_mat);
        let out = col2im(&p_mat, f, oh, ow, k, stride, padding, h, w);
        let rg = self.requires(x) || self.requires(kernels);
        Ok(self.push(
            Cow::Owned(Tensor::new(vec![f, oh, ow], out)?),
            Op::ConvTranspose2d {
                x,
                kernels,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Per-channel bias on a rank-3 tensor: `out[c,i,j] = x[c,i,j] + bias[c]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if xs.len() != 3 || bs != [xs[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: xs,
                rhs: bs,
            }
            .into());
        }
        let plane = xs[1] * xs[2];
        let mut out = self.value(x).data().to_vec();
        for (c, &b) in self.value(bias).data().iter().enumerate() {
            for v in &mut out[c * plane..(c + 1) * plane] {
                *v += b;
            }
        }
        let rg = self.requires(x) || self.requires(bias);
        Ok(self.push(
            Cow::Owned(Tensor::new(xs, out)?),
            Op::ChannelBias { x, bias },
            rg,
        ))
    }

    /// Center crop of a rank-3 tensor to `[C, th, tw]`.
    pub fn center_crop(&mut self, x: Var, th: usize, tw: usize) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || th > xs[1] || tw > xs[2] || th == 0 || tw == 0 {
            return Err(AutodiffError::BadCrop {
                input: xs,
                target: vec![th, tw],
            });
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let off_h = (h - th) / 2;
        let off_w = (w - tw) / 2;
        let xv = self.value(x).data();
        let mut out = vec![0.0; c * th * tw];
        for ci in 0..c {
            for i in 0..th {
                let src = (ci * h + i + off_h) * w + off_w;
                let dst = (ci * th + i) * tw;
                out[dst..dst + tw].copy_from_slice(&xv[src..src + tw]);
            }
        }
        let rg = self.requires(x);
        Ok(self.push(
            Cow::Owned(Tensor::new(vec![c, th, tw], out)?),
            Op::CenterCrop { x, off_h, off_w },
            rg,
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Populates gradients for every
    /// reachable variable that requires one; may run once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.spent {
            return Err(AutodiffError::BackwardAlreadyRun);
        }
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: loss_shape });
        }
        self.spent = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(&loss_shape, 1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the loss with respect to `v`, if one was produced.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for a list of variables, zero-filled where nothing flowed.
    pub fn grads_or_zero(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter()
            .map(|&v| {
                self.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
            })
            .collect()
    }

    fn accumulate(&mut self, v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, id: usize, g: &Tensor) {
        // Ops are matched by moving parent ids out; values are read fresh.
        match &self.nodes[id].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.scale(-1.0));
            }
            &Op::Mul(a, b) => {
                let da = g.mul(self.value(b)).expect("shape checked at forward");
                let db = g.mul(self.value(a)).expect("shape checked at forward");
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::Scale(a, s) => self.accumulate(a, g.scale(s)),
            &Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gi, &yi)| gi * (1.0 - yi * yi))
                    .collect();
                let shape = y.shape().to_vec();
                self.accumulate(a, Tensor::new(shape, d).unwrap());
            }
            &Op::Relu(a) => {
                let xv = self.value(a);
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                let shape = xv.shape().to_vec();
                self.accumulate(a, Tensor::new(shape, d).unwrap());
            }
            &Op::Exp(a) => {
                let d = g.mul(&self.nodes[id].value).expect("same shape");
                self.accumulate(a, d);
            }
            &Op::MatVec { w, x } => {
                let wv = self.value(w);
                let xv = self.value(x);
                let (m, n) = (wv.shape()[0], wv.shape()[1]);
                let dw = self.requires(w).then(|| {
                    let mut dw = vec![0.0; m * n];
                    for i in 0..m {
                        let gi = g.data()[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &mut dw[i * n..(i + 1) * n];
                        for (d, &xj) in row.iter_mut().zip(xv.data()) {
                            *d += gi * xj;
                        }
                    }
                    Tensor::new(vec![m, n], dw).unwrap()
                });
                let dx = self.requires(x).then(|| {
                    let mut dx = vec![0.0; n];
                    for i in 0..m {
                        let gi = g.data()[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &wv.data()[i * n..(i + 1) * n];
                        for (d, &wij) in dx.iter_mut().zip(row) {
                            *d += gi * wij;
                        }
                    }
                    Tensor::from_vec(dx)
                });
                if let Some(dw) = dw {
                    self.accumulate(w, dw);
                }
                if let Some(dx) = dx {
                    self.accumulate(x, dx);
                }
            }
            &Op::MatMul { a, b } => {
                let av = self.value(a);
                let bv = self.value(b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let da = self.requires(a).then(|| {
                    // dA = g . B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g.data()[i * n + j] * bv.data()[kk * n + j];
                            }
                            da[i * k + kk] = acc;
                        }
                    }
                    Tensor::new(vec![m, k], da).unwrap()
                });
                let db = self.requires(b).then(|| {
                    // dB = A^T . g
                    let mut db = vec![0.0; k * n];
                    for kk in 0..k {
                        for i in 0..m {
                            let aik = av.data()[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[kk * n + j] += aik * g.data()[i * n + j];
                            }
                        }
                    }
                    Tensor::new(vec![k, n], db).unwrap()
                });
                if let Some(da) = da {
                    self.accumulate(a, da);
                }
                if let Some(db) = db {
                    self.accumulate(b, db);
                }
            }
            Op::Concat(parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let len = self.value(p).len();
                    let piece = Tensor::from_vec(g.data()[offset..offset + len].to_vec());
                    self.accumulate(p, piece);
                    offset += len;
                }
            }
            &Op::Slice { src, start } => {
                let mut d = Tensor::zeros(self.value(src).shape());
                d.data_mut()[start..start + g.len()].copy_from_slice(g.data());
                self.accumulate(src, d);
            }
            &Op::SumAll(a) => {
                let d = Tensor::full(self.value(a).shape(), g.item());
                self.accumulate(a, d);
            }
            &Op::MeanAll(a) => {
                let n = self.value(a).len() as f64;
                let d = Tensor::full(self.value(a).shape(), g.item() / n);
                self.accumulate(a, d);
            }
            &Op::Mse { pred, target } => {
                let p = self.value(pred);
                let t = self.value(target);
                let n = p.len() as f64;
                let s = 2.0 * g.item() / n;
                let d: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| s * (a - b))
                    .collect();
                let shape = p.shape().to_vec();
                self.accumulate(pred, Tensor::new(shape.clone(), d.clone()).unwrap());
                if self.requires(target) {
                    let neg: Vec<f64> = d.iter().map(|v| -v).collect();
                    self.accumulate(target, Tensor::new(shape, neg).unwrap());
                }
            }
            &Op::KlStdNormal { mu, log_var } => {
                let s = g.item();
                let dmu = self.value(mu).scale(s);
                let dlv: Vec<f64> = self
                    .value(log_var)
                    .data()
                    .iter()
                    .map(|&l| s * 0.5 * (l.exp() - 1.0))
                    .collect();
                let shape = self.value(log_var).shape().to_vec();
                self.accumulate(mu, dmu);
                self.accumulate(log_var, Tensor::new(shape, dlv).unwrap());
            }
            &Op::Reparam { mu, log_var, eps } => {
                self.accumulate(mu, g.clone());
                if self.requires(log_var) {
                    let dlv: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.value(log_var).data())
                        .zip(self.value(eps).data())
                        .map(|((&gi, &l), &e)| gi * 0.5 * (0.5 * l).exp() * e)
                        .collect();
                    let shape = self.value(log_var).shape().to_vec();
                    self.accumulate(log_var, Tensor::new(shape, dlv).unwrap());
                }
                // No gradient into eps by contract.
            }
            &Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                inv_std,
            } => {
                let xv = self.value(x);
                let gv = self.value(gain);
                let d = xv.len() as f64;
                let xhat: Vec<f64> = xv.data().iter().map(|&v| (v - mean) * inv_std).collect();
                let gy: Vec<f64> = g.data().iter().zip(gv.data()).map(|(&a, &b)| a * b).collect();
                let mean_gy = gy.iter().sum::<f64>() / d;
                let mean_gy_xhat = gy.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d;
                let dx: Vec<f64> = gy
                    .iter()
                    .zip(&xhat)
                    .map(|(&gyi, &xh)| inv_std * (gyi - mean_gy - xh * mean_gy_xhat))
                    .collect();
                let dgain: Vec<f64> = g.data().iter().zip(&xhat).map(|(&a, &b)| a * b).collect();
                self.accumulate(x, Tensor::from_vec(dx));
                self.accumulate(gain, Tensor::from_vec(dgain));
                self.accumulate(bias, g.clone());
            }
            &Op::Conv2d {
                x,
                kernels,
                stride,
                padding,
            } => {
                let xv = self.value(x);
                let kv = self.value(kernels);
                let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (f, k) = (kv.shape()[0], kv.shape()[2]);
                let (oh, ow) = (g.shape()[1], g.shape()[2]);
                let need_dx = self.requires(x);
                let need_dk = self.requires(kernels);
                let patch = c * k * k;
                let pos = oh * ow;
                let dx = need_dx.then(|| {
                    // dcols = K^T . g, scattered back to input space.
                    let mut dcols = vec![0.0; patch * pos];
                    gemm_tn(patch, f, pos, kv.data(), g.data(), &mut dcols);
                    col2im(&dcols, c, h, w, k, stride, padding, oh, ow)
                });
                let dk = need_dk.then(|| {
                    // dK = g . cols^T over positions.
                    let cols = im2col(xv.data(), c, h, w, k, stride, padding, oh, ow);
                    let mut dk = vec![0.0; f * patch];
                    gemm_nt(f, pos, patch, g.data(), &cols, &mut dk);
                    dk
                });
                if let Some(dx) = dx {
                    self.accumulate(x, Tensor::new(vec![c, h, w], dx).unwrap());
                }
                if let Some(dk) = dk {
                    self.accumulate(kernels, Tensor::new(vec![f, c, k, k], dk).unwrap());
                }
            }
            &Op::ConvTranspose2d {
                x,
                kernels,
                stride,
                padding,
            } => {
                let xv = self.value(x);
                let kv = self.value(kernels);
                let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (f, k) = (kv.shape()[1], kv.shape()[2]);
                let (oh, ow) = (g.shape()[1], g.shape()[2]);
                let need_dx = self.requires(x);
                let need_dk = self.requires(kernels);
                let patch = f * k * k;
                let pos = h * w;
                // Patches of the upstream gradient at the input lattice.
                let g_cols = im2col(g.data(), f, oh, ow, k, stride, padding, h, w);
                let dx = need_dx.then(|| {
                    // dx[c, pos] = K[c, f*k*k] . g_cols[f*k*k, pos]
                    let mut dx = vec![0.0; c * pos];
                    gemm_nn(c, patch, pos, kv.data(), &g_cols, &mut dx);
                    dx
                });
                let dk = need_dk.then(|| {
                    // dK[c, (f,u,v)] = x[c, pos] . g_cols[(f,u,v), pos]^T
                    let mut dk = vec![0.0; c * patch];
                    gemm_nt(c, pos, patch, xv.data(), &g_cols, &mut dk);
                    dk
                });
                if let Some(dx) = dx {
                    self.accumulate(x, Tensor::new(vec![c, h, w], dx).unwrap());
                }
                if let Some(dk) = dk {
                    self.accumulate(kernels, Tensor::new(vec![c, f, k, k], dk).unwrap());
                }
            }
            &Op::CenterCrop { x, off_h, off_w } => {
                let xs = self.value(x).shape().to_vec();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (th, tw) = (g.shape()[1], g.shape()[2]);
                let mut dx = vec![0.0; c * h * w];
                for ci in 0..c {
                    for i in 0..th {
                        let dst = (ci * h + i + off_h) * w + off_w;
                        let src = (ci * th + i) * tw;
                        dx[dst..dst + tw].copy_from_slice(&g.data()[src..src + tw]);
                    }
                }
                self.accumulate(x, Tensor::new(vec![c, h, w], dx).unwrap());
            }
            &Op::Reshape { x } => {
                let shape = self.value(x).shape().to_vec();
                self.accumulate(x, g.reshape(&shape).unwrap());
            }
            &Op::ChannelBias { x, bias } => {
                self.accumulate(x, g.clone());
                if self.requires(bias) {
                    let c = self.value(bias).len();
                    let plane = g.len() / c;
                    let db: Vec<f64> = (0..c)
                        .map(|ci| g.data()[ci * plane..(ci + 1) * plane].iter().sum())
                        .collect();
                    self.accumulate(bias, Tensor::from_vec(db));
                }
            }
        }
    }
}

/// Output extents of a 2-D convolution, or `None` when non-positive.
pub fn conv_out(h: usize, w: usize, k: usize, stride: usize, padding: usize) -> Option<(usize, usize)> {
    let oh = (h + 2 * padding).checked_sub(k)? / stride + 1;
    let ow = (w + 2 * padding).checked_sub(k)? / stride + 1;
    (oh >= 1 && ow >= 1).then_some((oh, ow))
}

/// Half-open index range `[lo, hi)` within `0..extent` such that
/// `0 <= idx * stride + offset < limit`; keeps the convolution inner loops
/// free of bounds branches.
fn valid_range(extent: usize, stride: usize, offset: isize, limit: usize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let hi_num = limit as isize - 1 - offset;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / stride + 1).min(extent);
    (lo.min(hi), hi)
}

// Convolutions run as patch-matrix products: im2col gathers input windows
// into a `[c*k*k, ph*pw]` matrix, the contraction is a plain GEMM with
// unit-stride inner loops, and col2im scatters patch rows back. The same
// three pieces express both directions and both gradients.

/// Patch matrix of `x [c, h, w]`: row `(c, u, v)`, column `(i, j)` over the
/// `ph x pw` position lattice, holding `x[c, i*s + u - p, j*s + v - p]`
/// (zero outside).
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ph: usize,
    pw: usize,
) -> Vec<f64> {
    let pos = ph * pw;
    let mut cols = vec![0.0; c * k * k * pos];
    let p = padding as isize;
    for ci in 0..c {
        for u in 0..k {
            let off_a = u as isize - p;
            let (ilo, ihi) = valid_range(ph, stride, off_a, h);
            for v in 0..k {
                let off_b = v as isize - p;
                let (jlo, jhi) = valid_range(pw, stride, off_b, w);
                if jlo >= jhi {
                    continue;
                }
                let row = ((ci * k + u) * k + v) * pos;
                for i in ilo..ihi {
                    let a = ((i * stride) as isize + off_a) as usize;
                    let src = (ci * h + a) * w + ((jlo * stride) as isize + off_b) as usize;
                    let dst = row + i * pw + jlo;
                    if stride == 1 {
                        cols[dst..dst + (jhi - jlo)]
                            .copy_from_slice(&x[src..src + (jhi - jlo)]);
                    } else {
                        let xs = &x[src..];
                        for (jj, cv) in cols[dst..dst + (jhi - jlo)].iter_mut().enumerate() {
                            *cv = xs[jj * stride];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch rows into `[c, th, tw]`.
fn col2im(
    cols: &[f64],
    c: usize,
    th: usize,
    tw: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ph: usize,
    pw: usize,
) -> Vec<f64> {
    let pos = ph * pw;
    let mut out = vec![0.0; c * th * tw];
    let p = padding as isize;
    for ci in 0..c {
        for u in 0..k {
            let off_a = u as isize - p;
            let (ilo, ihi) = valid_range(ph, stride, off_a, th);
            for v in 0..k {
                let off_b = v as isize - p;
                let (jlo, jhi) = valid_range(pw, stride, off_b, tw);
                if jlo >= jhi {
                    continue;
                }
                let row = ((ci * k + u) * k + v) * pos;
                for i in ilo..ihi {
                    let a = ((i * stride) as isize + off_a) as usize;
                    let dst = (ci * th + a) * tw + ((jlo * stride) as isize + off_b) as usize;
                    let src = row + i * pw + jlo;
                    if stride == 1 {
                        for (o, &cv) in out[dst..dst + (jhi - jlo)]
                            .iter_mut()
                            .zip(&cols[src..src + (jhi - jlo)])
                        {
                            *o += cv;
                        }
                    } else {
                        let os = &mut out[dst..];
                        for (jj, &cv) in cols[src..src + (jhi - jlo)].iter().enumerate() {
                            os[jj * stride] += cv;
                        }
                    }
                }
            }
        }
    }
    out
}

use crate::tensor::{axpy, dot};

/// `out[m, n] += a[m, kk] . b[kk, n]`, row-major.
fn gemm_nn(m: usize, kk: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * kk..(i + 1) * kk];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &al) in arow.iter().enumerate() {
            if al == 0.0 {
                continue;
            }
            axpy(orow, al, &b[l * n..(l + 1) * n]);
        }
    }
}

/// `out[m, n] += a[m, kk] . b[n, kk]^T`, row-major (dot products of rows).
fn gemm_nt(m: usize, kk: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * kk..(i + 1) * kk];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            *o += dot(arow, &b[j * kk..(j + 1) * kk]);
        }
    }
}

/// `out[m, n] += a[kk, m]^T . b[kk, n]`, row-major.
fn gemm_tn(m: usize, kk: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for l in 0..kk {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for (i, &al) in arow.iter().enumerate() {
            if al == 0.0 {
                continue;
            }
            axpy(&mut out[i * n..(i + 1) * n], al, brow);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity_layer_passes_through() {
        let w = Tensor::identity(3);
        let b = Tensor::zeros(&[3]);
        let x = Tensor::from_vec(vec![0.5, -1.0, 2.0]);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.input(&x), tape.param(&w), tape.param(&b));
        let y = tape.dense(xv, wv, bv, Activation::None).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn dense_zero_input_tanh_of_bias() {
        let w = Tensor::zeros(&[2, 3]);
        let b = Tensor::from_vec(vec![0.3, -0.7]);
        let x = Tensor::zeros(&[3]);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.input(&x), tape.param(&w), tape.param(&b));
        let y = tape.dense(xv, wv, bv, Activation::Tanh).unwrap();
        assert_eq!(tape.value(y), &b.tanh());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let s = tape.sum_all(xv);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(xv).unwrap(), &Tensor::full(&[3], 1.0));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let x = Tensor::from_vec(vec![1.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let s = tape.sum_all(xv);
        tape.backward(s).unwrap();
        assert!(matches!(
            tape.backward(s),
            Err(AutodiffError::BackwardAlreadyRun)
        ));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let y = tape.tanh(xv);
        assert!(matches!(
            tape.backward(y),
            Err(AutodiffError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn kl_closed_form_values() {
        // KL(N(0,I) || N(0,I)) = 0.
        let mu = Tensor::zeros(&[4]);
        let lv = Tensor::zeros(&[4]);
        let mut tape = Tape::new();
        let q = GaussianLatent {
            mu: tape.param(&mu),
            log_var: tape.param(&lv),
        };
        let kl = tape.kl_to_standard_normal(q).unwrap();
        assert_eq!(tape.value(kl).item(), 0.0);

        // d=1, mu=1, log_var=0 -> 1/2.
        let mu = Tensor::from_vec(vec![1.0]);
        let lv = Tensor::zeros(&[1]);
        let mut tape = Tape::new();
        let q = GaussianLatent {
            mu: tape.param(&mu),
            log_var: tape.param(&lv),
        };
        let kl = tape.kl_to_standard_normal(q).unwrap();
        assert!((tape.value(kl).item() - 0.5).abs() < 1e-15);

        // d=1, mu=0, sigma^2=2 -> (2 - ln 2 - 1)/2.
        let mu = Tensor::zeros(&[1]);
        let lv = Tensor::from_vec(vec![2.0_f64.ln()]);
        let mut tape = Tape::new();
        let q = GaussianLatent {
            mu: tape.param(&mu),
            log_var: tape.param(&lv),
        };
        let kl = tape.kl_to_standard_normal(q).unwrap();
        let want = 0.5 * (2.0 - 2.0_f64.ln() - 1.0);
        assert!((tape.value(kl).item() - want).abs() < 1e-15);
        assert!((want - 0.15343).abs() < 1e-5);
    }

    #[test]
    fn reparameterize_edge_cases() {
        let mu = Tensor::from_vec(vec![1.5, -2.0]);
        let lv = Tensor::zeros(&[2]);

        let mut tape = Tape::new();
        let q = GaussianLatent {
            mu: tape.param(&mu),
            log_var: tape.param(&lv),
        };
        let eps = tape.constant(Tensor::zeros(&[2]));
        let z = tape.reparameterize(q, eps).unwrap();
        assert_eq!(tape.value(z), &mu);

        let mut tape = Tape::new();
        let q = GaussianLatent {
            mu: tape.param(&mu),
            log_var: tape.param(&lv),
        };
        let eps = tape.constant(Tensor::full(&[2], 1.0));
        let z = tape.reparameterize(q, eps).unwrap();
        assert_eq!(tape.value(z), &mu.add_scalar(1.0));
    }

    #[test]
    fn reparameterize_sampling_statistics() {
        // Empirical mean/var of z = mu + sigma*eps over 1e5 draws must match
        // (mu, exp(log_var)) within 3-sigma Monte-Carlo bounds.
        let mu = Tensor::from_vec(vec![0.7]);
        let lv = Tensor::from_vec(vec![0.4]);
        let sigma2 = 0.4_f64.exp();
        let n = 100_000;
        let mut rng = crate::rng::RngStream::new(17);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let mut tape = Tape::new();
            let q = GaussianLatent {
                mu: tape.input(&mu),
                log_var: tape.input(&lv),
            };
            let eps = tape.constant(rng.normal_tensor(&[1], 0.0, 1.0).unwrap());
            let z = tape.reparameterize(q, eps).unwrap();
            let zv = tape.value(z).item();
            sum += zv;
            sumsq += zv * zv;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let mean_tol = 3.0 * sigma2.sqrt() / (n as f64).sqrt();
        let var_tol = 3.0 * sigma2 * (2.0 / n as f64).sqrt();
        assert!((mean - 0.7).abs() <= mean_tol, "mean {mean}");
        assert!((var - sigma2).abs() <= var_tol, "var {var}");
    }

    #[test]
    fn mse_values_and_gradient() {
        let x = Tensor::from_vec(vec![0.0, 0.0]);
        let y = Tensor::from_vec(vec![1.0, 1.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let yv = tape.input(&y);
        let m = tape.mse(xv, yv).unwrap();
        assert_eq!(tape.value(m).item(), 1.0);
        tape.backward(m).unwrap();
        // d/dx mean((x-y)^2) = 2(x-y)/n = [-1, -1].
        assert_eq!(tape.grad(xv).unwrap().data(), &[-1.0, -1.0]);

        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let xx = tape.input(&x);
        let m = tape.mse(xv, xx).unwrap();
        assert_eq!(tape.value(m).item(), 0.0);
    }

    #[test]
    fn layer_norm_constant_input_is_bias() {
        let x = Tensor::full(&[5], 3.3);
        let gain = Tensor::full(&[5], 1.0);
        let bias = Tensor::zeros(&[5]);
        let mut tape = Tape::new();
        let (xv, gv, bv) = (tape.input(&x), tape.param(&gain), tape.param(&bias));
        let y = tape.layer_norm(xv, gv, bv, 1e-5).unwrap();
        for &v in tape.value(y).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn conv2d_matches_paper_geometry() {
        let x = Tensor::zeros(&[4, 100, 100]);
        let k = Tensor::zeros(&[16, 4, 3, 3]);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.input(&x), tape.input(&k));
        let y = tape.conv2d(xv, kv, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[16, 50, 50]);
    }

    #[test]
    fn conv_transpose2d_matches_paper_geometry() {
        let x = Tensor::zeros(&[128, 7, 7]);
        let k = Tensor::zeros(&[128, 64, 3, 3]);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.input(&x), tape.input(&k));
        let y = tape.conv_transpose2d(xv, kv, 2, 1, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[64, 14, 14]);
    }

    #[test]
    fn conv2d_1x1_kernel_sums_channels() {
        let x = Tensor::new(
            vec![2, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0],
        )
        .unwrap();
        let k = Tensor::new(vec![1, 2, 1, 1], vec![1.0, 1.0]).unwrap();
        let mut tape = Tape::new();
        let (xv, kv) = (tape.input(&x), tape.input(&k));
        let y = tape.conv2d(xv, kv, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 22.0, 33.0, 44.0]);
    }

    #[test]
    fn conv_transpose2d_identity_kernel_passthrough() {
        let x = Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let mut tape = Tape::new();
        let (xv, kv) = (tape.input(&x), tape.input(&k));
        let y = tape.conv_transpose2d(xv, kv, 1, 0, 0).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn conv2d_rejects_bad_geometry() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 5, 5]);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.input(&x), tape.input(&k));
        assert!(matches!(
            tape.conv2d(xv, kv, 1, 0),
            Err(AutodiffError::BadConvGeometry { .. })
        ));
    }

    #[test]
    fn center_crop_and_gradient_scatter() {
        let x = Tensor::new(
            vec![1, 4, 4],
            (0..16).map(|v| v as f64).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let y = tape.center_crop(xv, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 6.0, 9.0, 10.0]);
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        let g = tape.grad(xv).unwrap();
        assert_eq!(g.sum(), 4.0);
        assert_eq!(g.data()[5], 1.0);
        assert_eq!(g.data()[0], 0.0);
    }

    #[test]
    fn slice_and_concat_roundtrip_gradients() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let a = tape.slice(xv, 0, 2).unwrap();
        let b = tape.slice(xv, 2, 2).unwrap();
        let c = tape.concat(&[b, a]).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 4.0, 1.0, 2.0]);
        let sq = tape.mul(c, c).unwrap();
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(xv).unwrap().data(), &[2.0, 4.0, 6.0, 8.0]);
    }
}
