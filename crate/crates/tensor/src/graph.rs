//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] owns every tensor produced during one forward pass. Nodes are
//! appended in evaluation order, so walking the tape backwards from the loss
//! visits each node after all of its consumers.

use std::fmt;

use crate::element::Element;
use crate::error::{invalid, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// How a batch-norm layer sources its statistics.
pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics and fold them into the running stats.
    Train(&'a mut BatchNormStats<T>),
    /// Normalize with the stored running stats.
    Eval(&'a BatchNormStats<T>),
}

/// User-defined differentiable op, for losses that do not decompose into the
/// built-in ops.
pub trait CustomOp<T: Element>: Send {
    fn name(&self) -> &str;

    /// Returns one optional gradient per input, each shaped like that input.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &[T],
    ) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Element> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    /// Stored as the geometry of the convolution it is the adjoint of.
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Concat(Vec<Var>),
    Narrow {
        input: Var,
        start: usize,
    },
    Upsample(Var),
    Mse {
        pred: Var,
        target: Var,
        mask: Option<Vec<T>>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Element> fmt::Debug for Op<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Concat(_) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Upsample(_) => "upsample",
            Op::Mse { .. } => "mse",
            Op::Custom { op, .. } => op.name(),
        };
        f.write_str(name)
    }
}

#[derive(Debug)]
struct Node<T: Element> {
    tensor: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input or parameter. Its `requires_grad` flag is kept.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf)
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].tensor.grad()
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.tensor.zero_grad());
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    fn push(&mut self, tensor: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: &[usize], data: Vec<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        let t = Tensor::from_vec(shape, data)?.with_requires_grad(rg);
        Ok(self.push(t, op))
    }

    fn dims4(&self, v: Var, what: &str) -> Result<[usize; 4]> {
        self.value(v)
            .dims4()
            .map_err(|_| invalid(format!("{what} must be NCHW, got {:?}", self.shape(v))))
    }

    /// 2-d convolution with an `O x I x K x K` weight and optional length-`O` bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input, "conv2d input")?;
        let [o, i, kh, kw] = self.dims4(weight, "conv2d weight")?;
        if i != c {
            return Err(invalid(format!(
                "conv2d: input channels {c} != weight in-channels {i}"
            )));
        }
        if kh != kw {
            return Err(invalid(format!("conv2d: non-square kernel {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(invalid("conv2d: stride must be >= 1"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(invalid(format!(
                    "conv2d: bias shape {:?} != out-channels [{o}]",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeometry::new(c, h, w, o, kh, stride, padding).ok_or_else(|| {
            invalid(format!(
                "conv2d: kernel {kh} exceeds padded input {h}x{w} (padding {padding})"
            ))
        })?;
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            n,
            &geom,
        );
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push_op(
            &[n, o, geom.out_h, geom.out_w],
            out,
            &inputs,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    /// Transposed convolution with an `I x O x K x K` weight; output extent
    /// is `(H - 1) * stride - 2 * padding + K`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input, "conv_transpose2d input")?;
        let [i, o, kh, kw] = self.dims4(weight, "conv_transpose2d weight")?;
        if i != c {
            return Err(invalid(format!(
                "conv_transpose2d: input channels {c} != weight in-channels {i}"
            )));
        }
        if kh != kw || stride == 0 {
            return Err(invalid(format!(
                "conv_transpose2d: unsupported kernel {kh}x{kw} / stride {stride}"
            )));
        }
        let out_h = ((h as isize - 1) * stride as isize - 2 * padding as isize + kh as isize).max(0)
            as usize;
        let out_w = ((w as isize - 1) * stride as isize - 2 * padding as isize + kw as isize).max(0)
            as usize;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(invalid(format!(
                "conv_transpose2d: non-positive output size from input {h}x{w}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(invalid(format!(
                    "conv_transpose2d: bias shape {:?} != out-channels [{o}]",
                    self.shape(b)
                )));
            }
        }
        // The adjoint convolution maps the (out_h, out_w) result back to (h, w).
        let geom = ConvGeometry::new(o, out_h, out_w, c, kh, stride, padding)
            .filter(|g| g.out_h == h && g.out_w == w)
            .ok_or_else(|| invalid("conv_transpose2d: inconsistent geometry"))?;
        let mut out = kernels::conv2d_input_grad(
            self.value(input).data(),
            self.value(weight).data(),
            n,
            &geom,
        );
        if let Some(b) = bias {
            let bias = self.value(b).data();
            let plane = out_h * out_w;
            for (idx, chunk) in out.chunks_mut(plane).enumerate() {
                let bv = bias[idx % o];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push_op(
            &[n, o, out_h, out_w],
            out,
            &inputs,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input, "batch_norm input")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(invalid(format!(
                "batch_norm: gamma/beta shapes {:?}/{:?} != channels [{c}]",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let plane = h * w;
        if n * plane == 0 {
            return Err(invalid("batch_norm: zero batch x spatial extent"));
        }
        let eps = T::lit(cfg.eps);
        let x = self.value(input).data();
        let (mean, var, batch_stats) = match mode {
            BatchNormMode::Train(stats) => {
                if stats.mean.len() != c {
                    return Err(invalid("batch_norm: running stats length mismatch"));
                }
                let (mean, var) = kernels::channel_moments(x, n, c, plane);
                let m = T::lit(cfg.momentum);
                let count = n * plane;
                let unbias = if count > 1 {
                    T::lit(count as f64 / (count - 1) as f64)
                } else {
                    T::one()
                };
                for ch in 0..c {
                    stats.mean[ch] = (T::one() - m) * stats.mean[ch] + m * mean[ch];
                    stats.var[ch] = (T::one() - m) * stats.var[ch] + m * var[ch] * unbias;
                }
                (mean, var, true)
            }
            BatchNormMode::Eval(stats) => {
                if stats.mean.len() != c {
                    return Err(invalid("batch_norm: running stats length mismatch"));
                }
                (stats.mean.clone(), stats.var.clone(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * plane;
                for i in base..base + plane {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    normalized[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        self.push_op(
            &[n, c, h, w],
            out,
            &[input, gamma, beta],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push_op(&shape, data, &[x], Op::Relu(x))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(invalid(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_op(&shape, data, &[a, b], Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_op(&shape, data, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push_op(&shape, data, &[x], Op::Scale(x, factor))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push_op(&[], vec![s], &[x], Op::Sum(x))
    }

    /// Concatenates NCHW tensors along the channel axis, in argument order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| invalid("concat_channels: no inputs"))?;
        let [n, _, h, w] = self.dims4(first, "concat input")?;
        let mut total = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.dims4(p, "concat input")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(invalid(format!(
                    "concat_channels: shape {:?} incompatible with {:?}",
                    self.shape(p),
                    self.shape(first)
                )));
            }
            total += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for ni in 0..n {
            for &p in parts {
                let pc = self.shape(p)[1];
                let src = self.value(p).data();
                data.extend_from_slice(&src[ni * pc * plane..(ni + 1) * pc * plane]);
            }
        }
        self.push_op(&[n, total, h, w], data, parts, Op::Concat(parts.to_vec()))
    }

    /// Channels `start..start + len` of an NCHW tensor.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "narrow input")?;
        if start + len > c || len == 0 {
            return Err(invalid(format!(
                "narrow_channels: range {start}..{} outside {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * plane);
        for ni in 0..n {
            let base = (ni * c + start) * plane;
            data.extend_from_slice(&src[base..base + len * plane]);
        }
        self.push_op(&[n, len, h, w], data, &[x], Op::Narrow { input: x, start })
    }

    /// Bilinear upsampling (half-pixel convention) to `out_h x out_w`.
    pub fn bilinear_upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "upsample input")?;
        if out_h < h || out_w < w {
            return Err(invalid(format!(
                "bilinear_upsample: target {out_h}x{out_w} smaller than input {h}x{w}"
            )));
        }
        let data = kernels::bilinear_resize(self.value(x).data(), n * c, h, w, out_h, out_w);
        self.push_op(&[n, c, out_h, out_w], data, &[x], Op::Upsample(x))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.mse_impl(pred, target, None)
    }

    /// `sum(mask * (pred - target)^2) / numel`; `mask` matches `pred` in length.
    pub fn masked_mse(&mut self, pred: Var, target: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(pred).numel() {
            return Err(invalid(format!(
                "masked_mse: mask length {} != {}",
                mask.len(),
                self.value(pred).numel()
            )));
        }
        self.mse_impl(pred, target, Some(mask))
    }

    fn mse_impl(&mut self, pred: Var, target: Var, mask: Option<Vec<T>>) -> Result<Var> {
        self.same_shape(pred, target, "mse")?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let count = T::from_usize(p.len().max(1)).unwrap_or(T::one());
        let total: T = match &mask {
            Some(m) => p
                .iter()
                .zip(t)
                .zip(m)
                .map(|((&a, &b), &w)| w * (a - b) * (a - b))
                .sum(),
            None => p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum(),
        };
        self.push_op(
            &[],
            vec![total / count],
            &[pred, target],
            Op::Mse { pred, target, mask },
        )
    }

    /// Records the result of a [`CustomOp`] computed by the caller.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Result<Var> {
        let shape = output.shape().to_vec();
        self.push_op(
            &shape,
            output.into_data(),
            inputs,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Reverse pass from a scalar `loss`, accumulating into the stored
    /// gradient of every `requires_grad` node reachable from it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            for (v, contribution) in self.input_grads(i, &g) {
                match &mut grads[v.0] {
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&contribution)
                        .for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(contribution),
                }
            }
            self.nodes[i].tensor.accumulate_grad(&g);
        }
        Ok(())
    }

    fn input_grads(&self, index: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[index];
        let mut out = Vec::new();
        let mut emit = |v: Var, f: &mut dyn FnMut() -> Vec<T>| {
            if self.requires_grad(v) {
                out.push((v, f()));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let n = self.shape(*input)[0];
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                emit(*input, &mut || kernels::conv2d_input_grad(g, w, n, geom));
                emit(*weight, &mut || kernels::conv2d_weight_grad(x, g, n, geom));
                if let Some(b) = bias {
                    emit(*b, &mut || {
                        kernels::channel_sums(g, n, geom.out_channels, geom.out_h * geom.out_w)
                    });
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let n = self.shape(*input)[0];
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                emit(*input, &mut || kernels::conv2d_forward(g, w, None, n, geom));
                emit(*weight, &mut || kernels::conv2d_weight_grad(g, x, n, geom));
                if let Some(b) = bias {
                    emit(*b, &mut || {
                        kernels::channel_sums(g, n, geom.in_channels, geom.in_h * geom.in_w)
                    });
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let [n, c, h, w] = node.tensor.dims4().expect("4-d");
                let plane = h * w;
                let gdy = self.value(*gamma).data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xh = vec![T::zero(); c];
                for ni in 0..n {
                    for ch in 0..c {
                        let base = (ni * c + ch) * plane;
                        for i in base..base + plane {
                            sum_dy[ch] += g[i];
                            sum_dy_xh[ch] += g[i] * normalized[i];
                        }
                    }
                }
                emit(*input, &mut || {
                    let count = T::from_usize(n * plane).unwrap_or(T::one());
                    let mut dx = vec![T::zero(); g.len()];
                    for ni in 0..n {
                        for ch in 0..c {
                            let base = (ni * c + ch) * plane;
                            let k = gdy[ch] * inv_std[ch];
                            for i in base..base + plane {
                                dx[i] = if *batch_stats {
                                    k * (g[i]
                                        - sum_dy[ch] / count
                                        - normalized[i] * sum_dy_xh[ch] / count)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                    dx
                });
                emit(*gamma, &mut || sum_dy_xh.clone());
                emit(*beta, &mut || sum_dy.clone());
            }
            Op::Relu(x) => {
                let y = node.tensor.data();
                emit(*x, &mut || {
                    g.iter()
                        .zip(y)
                        .map(|(&gv, &yv)| if yv > T::zero() { gv } else { T::zero() })
                        .collect()
                });
            }
            Op::Add(a, b) => {
                emit(*a, &mut || g.to_vec());
                emit(*b, &mut || g.to_vec());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                emit(*a, &mut || g.iter().zip(bv).map(|(&x, &y)| x * y).collect());
                emit(*b, &mut || g.iter().zip(av).map(|(&x, &y)| x * y).collect());
            }
            Op::Scale(x, factor) => {
                emit(*x, &mut || g.iter().map(|&v| v * *factor).collect());
            }
            Op::Sum(x) => {
                let len = self.value(*x).numel();
                emit(*x, &mut || vec![g[0]; len]);
            }
            Op::Concat(parts) => {
                let [n, total, h, w] = node.tensor.dims4().expect("4-d");
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    let start = offset;
                    emit(p, &mut || {
                        let mut dp = Vec::with_capacity(n * pc * plane);
                        for ni in 0..n {
                            let base = (ni * total + start) * plane;
                            dp.extend_from_slice(&g[base..base + pc * plane]);
                        }
                        dp
                    });
                    offset += pc;
                }
            }
            Op::Narrow { input, start } => {
                let [n, c, h, w] = self.value(*input).dims4().expect("4-d");
                let len = node.tensor.shape()[1];
                let plane = h * w;
                emit(*input, &mut || {
                    let mut dx = vec![T::zero(); n * c * plane];
                    for ni in 0..n {
                        let dst = (ni * c + start) * plane;
                        let src = ni * len * plane;
                        dx[dst..dst + len * plane].copy_from_slice(&g[src..src + len * plane]);
                    }
                    dx
                });
            }
            Op::Upsample(x) => {
                let [n, c, h, w] = self.value(*x).dims4().expect("4-d");
                let [_, _, oh, ow] = node.tensor.dims4().expect("4-d");
                emit(*x, &mut || {
                    kernels::bilinear_resize_backward(g, n * c, h, w, oh, ow)
                });
            }
            Op::Mse { pred, target, mask } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let k = g[0] * T::lit(2.0) / T::from_usize(p.len().max(1)).unwrap_or(T::one());
                let diff = |sign: T| -> Vec<T> {
                    match mask {
                        Some(m) => p
                            .iter()
                            .zip(t)
                            .zip(m)
                            .map(|((&a, &b), &w)| sign * k * w * (a - b))
                            .collect(),
                        None => p.iter().zip(t).map(|(&a, &b)| sign * k * (a - b)).collect(),
                    }
                };
                emit(*pred, &mut || diff(T::one()));
                emit(*target, &mut || diff(-T::one()));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let grads = op.backward(&values, &node.tensor, g);
                for (&v, gv) in inputs.iter().zip(grads) {
                    if let Some(gv) = gv {
                        emit(v, &mut || gv.clone());
                    }
                }
            }
        }
        out
    }
}
