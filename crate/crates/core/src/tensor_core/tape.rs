//! Recording tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Nodes are only ever appended, so the node
//! order is already a topological order and [`Tape::backward`] walks it in
//! reverse.

use super::conv::{self, ConvAlgorithm};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters of the leaky rectifier `max(0,x) + slope·min(0,x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationConfig {
    pub negative_slope: f32,
    /// Accepted for API parity; every op on the tape produces a new value.
    pub inplace: bool,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        ActivationConfig {
            negative_slope: 0.01,
            inplace: false,
        }
    }
}

impl ActivationConfig {
    pub fn with_slope(negative_slope: f32) -> Result<Self> {
        if negative_slope.is_nan() || negative_slope < 0.0 {
            return Err(Error::Input(format!(
                "negative_slope must be >= 0, got {negative_slope}"
            )));
        }
        Ok(ActivationConfig {
            negative_slope,
            inplace: false,
        })
    }
}

/// Batch normalization running in training mode (batch statistics) or
/// evaluation mode (supplied running statistics).
#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a, T: Element> {
    Train,
    Eval {
        running_mean: &'a Tensor<T>,
        running_var: &'a Tensor<T>,
    },
}

/// Per-channel statistics of a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T: Element> {
    pub mean: Tensor<T>,
    /// Unbiased variance, as tracked by running statistics.
    pub var: Tensor<T>,
}

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BCE_CLAMP: f64 = 1e-7;

enum Op<T: Element> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddChannelBias {
        x: Var,
        bias: Var,
    },
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    ChannelsLast(Var),
    SliceLast {
        x: Var,
        start: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Bce {
        o: Var,
        target: Tensor<T>,
        weights: Option<Tensor<T>>,
    },
    SmoothL1 {
        x: Var,
        target: Tensor<T>,
        weights: Option<Tensor<T>>,
    },
    Pick {
        x: Var,
        picks: Vec<(usize, T)>,
    },
}

struct Node<T: Element> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T: Element = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// A single-writer record of one forward computation.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    algorithm: ConvAlgorithm,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            algorithm: ConvAlgorithm::default(),
        }
    }

    pub fn with_algorithm(algorithm: ConvAlgorithm) -> Self {
        Tape {
            nodes: Vec::new(),
            algorithm,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records an input. Leaves with `requires_grad == false` are frozen:
    /// they never receive a gradient.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        debug_assert!(
            !inputs.iter().all(|v| self.value(*v).is_finite()) || value.is_finite(),
            "non-finite output from finite inputs"
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        x.zip_map(y, f)
            .map_err(|_| Error::Dimension(format!("{name}: shapes {:?} and {:?} differ", x.shape(), y.shape())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.value(x).map(|e| e * factor);
        self.push(v, &[x], Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, offset: T) -> Var {
        let v = self.value(x).map(|e| e + offset);
        self.push(v, &[x], Op::AddScalar(x))
    }

    /// `(v + 1) / 2`, mapping tanh range onto `[0,1]`.
    pub fn rescale_unit(&mut self, x: Var) -> Var {
        let half = T::from_f64_lossy(0.5);
        let shifted = self.add_scalar(x, T::one());
        self.scale(shifted, half)
    }

    /// Adds `bias[c]` to channel `c` of an `[N, C, ...]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x);
        let b = self.value(bias);
        if xs.rank() < 2 || b.shape() != [xs.shape()[1]] {
            return Err(Error::Dimension(format!(
                "add_channel_bias: bias {:?} does not match channels of {:?}",
                b.shape(),
                xs.shape()
            )));
        }
        let channels = xs.shape()[1];
        let plane: usize = xs.shape()[2..].iter().product();
        let mut v = xs.clone();
        for (i, chunk) in v.data_mut().chunks_exact_mut(plane).enumerate() {
            let add = b.data()[i % channels];
            chunk.iter_mut().for_each(|e| *e = *e + add);
        }
        Ok(self.push(v, &[x, bias], Op::AddChannelBias { x, bias }))
    }

    /// `[M,K] × [K,N] → [M,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let [m, k] = x.dims2()?;
        let [k2, n] = y.dims2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: {:?} × {:?} inner dimensions differ",
                x.shape(),
                y.shape()
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, x.data(), (k as isize, 1), y.data(), (n as isize, 1), &mut out, false);
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, &[a, b], Op::MatMul(a, b)))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let v = conv::conv2d_forward(
            self.value(x),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            pad,
            self.algorithm,
        )?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.push(
            v,
            &inputs,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            },
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let v = conv::conv_transpose2d_forward(
            self.value(x),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            pad,
            self.algorithm,
        )?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.push(
            v,
            &inputs,
            Op::ConvTranspose2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            },
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, cfg: ActivationConfig) -> Var {
        let slope = T::from_f64_lossy(cfg.negative_slope as f64);
        let v = self
            .value(x)
            .map(|e| e.max(T::zero()) + slope * e.min(T::zero()));
        self.push(v, &[x], Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, &[x], Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(T::tanh);
        self.push(v, &[x], Op::Tanh(x))
    }

    /// Unpadded max pooling over each channel plane.
    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xs = self.value(x);
        let [n, c, h, w] = xs.dims4()?;
        if kernel == 0 || stride == 0 || kernel > h || kernel > w {
            return Err(Error::Dimension(format!(
                "maxpool2d: kernel {kernel}, stride {stride} invalid for {:?}",
                xs.shape()
            )));
        }
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let data = xs.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let v = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(v, &[x], Op::MaxPool2d { x, argmax }))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, &[x], Op::Reshape(x)))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension(format!(
                    "concat: {s:?} incompatible with {base:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let mut out = Vec::new();
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.len() / outer;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(shape, out)?;
        Ok(self.push(
            v,
            inputs,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// NCHW → NHWC.
    pub fn channels_last(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        let [n, c, h, w] = xs.dims4()?;
        let v = Tensor::new(vec![n, h, w, c], nchw_to_nhwc(xs.data(), [n, c, h, w]))?;
        Ok(self.push(v, &[x], Op::ChannelsLast(x)))
    }

    /// Keeps `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xs = self.value(x);
        let d = *xs
            .shape()
            .last()
            .ok_or_else(|| Error::Dimension("slice_last on a rank-0 tensor".into()))?;
        if start >= end || end > d {
            return Err(Error::Dimension(format!(
                "slice_last {start}..{end} out of range for {:?}",
                xs.shape()
            )));
        }
        let out: Vec<T> = xs
            .data()
            .chunks_exact(d)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, &[x], Op::SliceLast { x, start }))
    }

    /// Batch normalization over `[N, C, ...]`, per channel.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// fold them into running estimates.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let xs = self.value(x);
        if xs.rank() < 2 {
            return Err(Error::Dimension(format!(
                "batchnorm needs [N, C, ...], got {:?}",
                xs.shape()
            )));
        }
        let (n, c) = (xs.shape()[0], xs.shape()[1]);
        let plane: usize = xs.shape()[2..].iter().product();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::Dimension(format!(
                    "batchnorm {name} {:?} does not match {c} channels",
                    self.value(v).shape()
                )));
            }
        }
        let eps = T::from_f64_lossy(BATCHNORM_EPS);
        let count = n * plane;
        let data = xs.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let train = matches!(mode, NormMode::Train);
        match mode {
            NormMode::Train => {
                let m = T::from_usize(count).unwrap();
                for (i, chunk) in data.chunks_exact(plane).enumerate() {
                    mean[i % c] = mean[i % c] + chunk.iter().copied().sum::<T>();
                }
                mean.iter_mut().for_each(|v| *v = *v / m);
                for (i, chunk) in data.chunks_exact(plane).enumerate() {
                    let mu = mean[i % c];
                    var[i % c] = var[i % c] + chunk.iter().map(|&e| (e - mu) * (e - mu)).sum::<T>();
                }
                var.iter_mut().for_each(|v| *v = *v / m);
            }
            NormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.shape() != [c] || running_var.shape() != [c] {
                    return Err(Error::Dimension(format!(
                        "batchnorm running statistics do not match {c} channels"
                    )));
                }
                mean.copy_from_slice(running_mean.data());
                var.copy_from_slice(running_var.data());
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(data.len());
        let mut out = Vec::with_capacity(data.len());
        for (i, chunk) in data.chunks_exact(plane).enumerate() {
            let ch = i % c;
            for &e in chunk {
                let h = (e - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(g[ch] * h + b[ch]);
            }
        }
        let stats = train.then(|| {
            let unbias = if count > 1 {
                T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
            } else {
                T::one()
            };
            BatchStats {
                mean: Tensor::new(vec![c], mean.clone()).unwrap(),
                var: Tensor::new(vec![c], var.iter().map(|&v| v * unbias).collect()).unwrap(),
            }
        });
        let v = Tensor::new(xs.shape().to_vec(), out)?;
        let var_out = self.push(
            v,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        );
        Ok((var_out, stats))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = row_softmax(self.value(x), false)?;
        Ok(self.push(v, &[x], Op::Softmax(x)))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let v = row_softmax(self.value(x), true)?;
        Ok(self.push(v, &[x], Op::LogSoftmax(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let v = Tensor::scalar(xs.sum() / T::from_usize(xs.len()).unwrap());
        self.push(v, &[x], Op::Mean(x))
    }

    /// Mean binary cross-entropy `-(1/n) Σ wᵢ (tᵢ ln oᵢ + (1-tᵢ) ln(1-oᵢ))`.
    ///
    /// Outputs are clamped to `[1e-7, 1-1e-7]` before the logarithms.
    pub fn bce_loss(
        &mut self,
        o: Var,
        target: &Tensor<T>,
        weights: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let os = self.value(o);
        if os.len() != target.len() {
            return Err(Error::Dimension(format!(
                "bce_loss: output {:?} and target {:?} differ",
                os.shape(),
                target.shape()
            )));
        }
        if let Some(w) = weights {
            if w.len() != os.len() {
                return Err(Error::Dimension(format!(
                    "bce_loss: weights {:?} do not match output {:?}",
                    w.shape(),
                    os.shape()
                )));
            }
        }
        if let Some(bad) = target.data().iter().find(|t| !(**t >= T::zero() && **t <= T::one())) {
            return Err(Error::Input(format!("bce_loss target {bad} outside [0,1]")));
        }
        let (lo, hi) = bce_bounds::<T>();
        let mut total = T::zero();
        for (i, (&ov, &tv)) in os.data().iter().zip(target.data()).enumerate() {
            let oc = ov.max(lo).min(hi);
            let w = weights.map_or(T::one(), |w| w.data()[i]);
            total = total + w * (tv * oc.ln() + (T::one() - tv) * (T::one() - oc).ln());
        }
        let n = T::from_usize(os.len()).unwrap();
        let v = Tensor::scalar(-total / n);
        Ok(self.push(
            v,
            &[o],
            Op::Bce {
                o,
                target: target.clone(),
                weights: weights.cloned(),
            },
        ))
    }

    /// `Σ wᵢ · smoothL1(xᵢ - targetᵢ)` with unit transition point.
    pub fn smooth_l1(
        &mut self,
        x: Var,
        target: &Tensor<T>,
        weights: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let xs = self.value(x);
        if xs.len() != target.len() || weights.is_some_and(|w| w.len() != xs.len()) {
            return Err(Error::Dimension(format!(
                "smooth_l1: input {:?}, target {:?} and weights must agree",
                xs.shape(),
                target.shape()
            )));
        }
        let half = T::from_f64_lossy(0.5);
        let mut total = T::zero();
        for (i, (&a, &b)) in xs.data().iter().zip(target.data()).enumerate() {
            let w = weights.map_or(T::one(), |w| w.data()[i]);
            if w == T::zero() {
                continue;
            }
            let d = (a - b).abs();
            let l = if d < T::one() { half * d * d } else { d - half };
            total = total + w * l;
        }
        Ok(self.push(
            Tensor::scalar(total),
            &[x],
            Op::SmoothL1 {
                x,
                target: target.clone(),
                weights: weights.cloned(),
            },
        ))
    }

    /// `Σ w · x[i]` over flat indices; the building block for
    /// cross-entropy over selected rows.
    pub fn pick(&mut self, x: Var, picks: Vec<(usize, T)>) -> Result<Var> {
        let xs = self.value(x);
        let mut total = T::zero();
        for &(i, w) in &picks {
            let v = xs.data().get(i).ok_or_else(|| {
                Error::Dimension(format!("pick index {i} out of range for {:?}", xs.shape()))
            })?;
            total = total + w * *v;
        }
        Ok(self.push(Tensor::scalar(total), &[x], Op::Pick { x, picks }))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            for (input, contribution) in self.local_grads(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(contribution.data())
                        .for_each(|(a, b)| *a = *a + *b),
                    slot => *slot = Some(contribution),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient contributions from one node to each of its inputs.
    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let out = &node.value;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.map(|e| -e)));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    res.push((*a, g.zip_map(self.value(*b), |x, y| x * y)?));
                }
                if self.needs(*b) {
                    res.push((*b, g.zip_map(self.value(*a), |x, y| x * y)?));
                }
            }
            Op::Scale(x, f) => res.push((*x, g.map(|e| e * *f))),
            Op::AddScalar(x) => res.push((*x, g.clone())),
            Op::AddChannelBias { x, bias } => {
                res.push((*x, g.clone()));
                if self.needs(*bias) {
                    let c = self.value(*bias).len();
                    let plane: usize = g.shape()[2..].iter().product();
                    let mut db = vec![T::zero(); c];
                    for (i, chunk) in g.data().chunks_exact(plane).enumerate() {
                        db[i % c] = db[i % c] + chunk.iter().copied().sum::<T>();
                    }
                    res.push((*bias, Tensor::new(vec![c], db)?));
                }
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let [m, k] = x.dims2()?;
                let [_, n] = y.dims2()?;
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g.data(), (n as isize, 1), y.data(), (1, n as isize), &mut da, false);
                    res.push((*a, Tensor::new(vec![m, k], da)?));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, x.data(), (1, k as isize), g.data(), (n as isize, 1), &mut db, false);
                    res.push((*b, Tensor::new(vec![k, n], db)?));
                }
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let want = [self.needs(*x), self.needs(*kernel), bias.is_some_and(|b| self.needs(b))];
                let gr = conv::conv2d_backward(self.value(*x), self.value(*kernel), g, *stride, *pad, want)?;
                res.extend(gr.input.map(|t| (*x, t)));
                res.extend(gr.kernel.map(|t| (*kernel, t)));
                if let (Some(b), Some(t)) = (bias, gr.bias) {
                    res.push((*b, t));
                }
            }
            Op::ConvTranspose2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let want = [self.needs(*x), self.needs(*kernel), bias.is_some_and(|b| self.needs(b))];
                let gr = conv::conv_transpose2d_backward(
                    self.value(*x),
                    self.value(*kernel),
                    g,
                    *stride,
                    *pad,
                    want,
                )?;
                res.extend(gr.input.map(|t| (*x, t)));
                res.extend(gr.kernel.map(|t| (*kernel, t)));
                if let (Some(b), Some(t)) = (bias, gr.bias) {
                    res.push((*b, t));
                }
            }
            Op::LeakyRelu(x, slope) => {
                let d = g.zip_map(self.value(*x), |ge, xe| if xe > T::zero() { ge } else { ge * *slope })?;
                res.push((*x, d));
            }
            Op::Sigmoid(x) => {
                res.push((*x, g.zip_map(out, |ge, y| ge * y * (T::one() - y))?));
            }
            Op::Tanh(x) => {
                res.push((*x, g.zip_map(out, |ge, y| ge * (T::one() - y * y))?));
            }
            Op::MaxPool2d { x, argmax } => {
                let xs = self.value(*x);
                let mut d = vec![T::zero(); xs.len()];
                for (&src, &ge) in argmax.iter().zip(g.data()) {
                    d[src] = d[src] + ge;
                }
                res.push((*x, Tensor::new(xs.shape().to_vec(), d)?));
            }
            Op::Reshape(x) => {
                res.push((*x, g.clone().reshape(self.value(*x).shape().to_vec())?));
            }
            Op::Concat { inputs, axis } => {
                let outer: usize = out.shape()[..*axis].iter().product();
                let row = g.len() / outer;
                let mut offset = 0;
                for v in inputs {
                    let t = self.value(*v);
                    let chunk = t.len() / outer;
                    if self.needs(*v) {
                        let mut d = Vec::with_capacity(t.len());
                        for o in 0..outer {
                            d.extend_from_slice(&g.data()[o * row + offset..o * row + offset + chunk]);
                        }
                        res.push((*v, Tensor::new(t.shape().to_vec(), d)?));
                    }
                    offset += chunk;
                }
            }
            Op::ChannelsLast(x) => {
                let [n, h, w, c] = g.dims4()?;
                let d = nhwc_to_nchw(g.data(), [n, c, h, w]);
                res.push((*x, Tensor::new(vec![n, c, h, w], d)?));
            }
            Op::SliceLast { x, start } => {
                let xs = self.value(*x);
                let d_in = *xs.shape().last().unwrap();
                let d_out = *g.shape().last().unwrap();
                let mut d = vec![T::zero(); xs.len()];
                for (dst, src) in d.chunks_exact_mut(d_in).zip(g.data().chunks_exact(d_out)) {
                    dst[*start..*start + d_out].copy_from_slice(src);
                }
                res.push((*x, Tensor::new(xs.shape().to_vec(), d)?));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xs = self.value(*x);
                let c = xs.shape()[1];
                let plane: usize = xs.shape()[2..].iter().product();
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (i, (gc, hc)) in g.data().chunks_exact(plane).zip(xhat.chunks_exact(plane)).enumerate() {
                    let ch = i % c;
                    for (&ge, &he) in gc.iter().zip(hc) {
                        sum_g[ch] = sum_g[ch] + ge;
                        sum_gx[ch] = sum_gx[ch] + ge * he;
                    }
                }
                if self.needs(*x) {
                    let m = T::from_usize(xs.len() / c).unwrap();
                    let mut d = Vec::with_capacity(xs.len());
                    for (i, (gc, hc)) in g.data().chunks_exact(plane).zip(xhat.chunks_exact(plane)).enumerate() {
                        let ch = i % c;
                        let k = gam[ch] * inv_std[ch];
                        for (&ge, &he) in gc.iter().zip(hc) {
                            d.push(if *train {
                                k * (ge - (sum_g[ch] + he * sum_gx[ch]) / m)
                            } else {
                                k * ge
                            });
                        }
                    }
                    res.push((*x, Tensor::new(xs.shape().to_vec(), d)?));
                }
                if self.needs(*gamma) {
                    res.push((*gamma, Tensor::new(vec![c], sum_gx)?));
                }
                if self.needs(*beta) {
                    res.push((*beta, Tensor::new(vec![c], sum_g)?));
                }
            }
            Op::Softmax(x) => {
                let d = *out.shape().last().unwrap_or(&1);
                let mut dx = Vec::with_capacity(out.len());
                for (yr, gr) in out.data().chunks_exact(d).zip(g.data().chunks_exact(d)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &ge)| y * ge).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&y, &ge)| y * (ge - dot)));
                }
                res.push((*x, Tensor::new(out.shape().to_vec(), dx)?));
            }
            Op::LogSoftmax(x) => {
                let d = *out.shape().last().unwrap_or(&1);
                let mut dx = Vec::with_capacity(out.len());
                for (yr, gr) in out.data().chunks_exact(d).zip(g.data().chunks_exact(d)) {
                    let total: T = gr.iter().copied().sum();
                    dx.extend(yr.iter().zip(gr).map(|(&y, &ge)| ge - y.exp() * total));
                }
                res.push((*x, Tensor::new(out.shape().to_vec(), dx)?));
            }
            Op::Sum(x) => {
                let ge = g.data()[0];
                res.push((*x, Tensor::full(self.value(*x).shape().to_vec(), ge)));
            }
            Op::Mean(x) => {
                let xs = self.value(*x);
                let ge = g.data()[0] / T::from_usize(xs.len()).unwrap();
                res.push((*x, Tensor::full(xs.shape().to_vec(), ge)));
            }
            Op::Bce { o, target, weights } => {
                let os = self.value(*o);
                let (lo, hi) = bce_bounds::<T>();
                let scale = g.data()[0] / T::from_usize(os.len()).unwrap();
                let d = os
                    .data()
                    .iter()
                    .zip(target.data())
                    .enumerate()
                    .map(|(i, (&ov, &tv))| {
                        if ov <= lo || ov >= hi {
                            return T::zero();
                        }
                        let w = weights.as_ref().map_or(T::one(), |w| w.data()[i]);
                        -scale * w * (tv / ov - (T::one() - tv) / (T::one() - ov))
                    })
                    .collect();
                res.push((*o, Tensor::new(os.shape().to_vec(), d)?));
            }
            Op::SmoothL1 { x, target, weights } => {
                let xs = self.value(*x);
                let ge = g.data()[0];
                let d = xs
                    .data()
                    .iter()
                    .zip(target.data())
                    .enumerate()
                    .map(|(i, (&a, &b))| {
                        let w = weights.as_ref().map_or(T::one(), |w| w.data()[i]);
                        let diff = a - b;
                        let slope = if diff.abs() < T::one() { diff } else { diff.signum() };
                        ge * w * slope
                    })
                    .collect();
                res.push((*x, Tensor::new(xs.shape().to_vec(), d)?));
            }
            Op::Pick { x, picks } => {
                let xs = self.value(*x);
                let ge = g.data()[0];
                let mut d = vec![T::zero(); xs.len()];
                for &(i, w) in picks {
                    d[i] = d[i] + ge * w;
                }
                res.push((*x, Tensor::new(xs.shape().to_vec(), d)?));
            }
        }
        Ok(res)
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn bce_bounds<T: Element>() -> (T, T) {
    let lo = T::from_f64_lossy(BCE_CLAMP);
    (lo, T::one() - lo)
}

fn row_softmax<T: Element>(x: &Tensor<T>, log: bool) -> Result<Tensor<T>> {
    let d = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Dimension("softmax of a rank-0 tensor".into()))?;
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(d) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let total: T = row.iter().map(|&v| (v - max).exp()).sum();
        if log {
            let lse = max + total.ln();
            out.extend(row.iter().map(|&v| v - lse));
        } else {
            out.extend(row.iter().map(|&v| (v - max).exp() / total));
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn nchw_to_nhwc<T: Element>(data: &[T], [n, c, h, w]: [usize; 4]) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            for p in 0..h * w {
                out[(b * h * w + p) * c + ch] = data[(b * c + ch) * h * w + p];
            }
        }
    }
    out
}

fn nhwc_to_nchw<T: Element>(data: &[T], [n, c, h, w]: [usize; 4]) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            for p in 0..h * w {
                out[(b * c + ch) * h * w + p] = data[(b * h * w + p) * c + ch];
            }
        }
    }
    out
}
