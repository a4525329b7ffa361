//! Wengert-list tape: every operation appends a node holding its forward value
//! and enough saved state to produce input gradients during `backward`.

use crate::conv::{self, ConvGeom, ConvTransposeGeom};
use crate::error::{invalid, mismatch, AutodiffError, Result};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Floor on `|z|` below which magnitude and phase gradients are zero.
pub const MAGNITUDE_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Conv1d { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom },
    ConvTranspose1d { x: Var, w: Var, bias: Option<Var>, geom: ConvTransposeGeom },
    Relu(Var),
    Sigmoid(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool, channels: usize, len: usize },
    Concat { parts: Vec<(Var, usize)>, batch: usize, len: usize },
    Magnitude { re: Var, im: Var },
    PhasorRe { re: Var, im: Var },
    PhasorIm { re: Var, im: Var },
    ReduceSum(Var),
    ReduceMean(Var),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Batch-norm behaviour for one call.
pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics and update the running estimates
    /// (`running = (1 - momentum) * running + momentum * batch`, unbiased variance).
    Train {
        running_mean: &'a mut [T],
        running_var: &'a mut [T],
        momentum: T,
    },
    /// Fixed affine map using the running estimates.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
    },
}

/// Records operations for one forward pass.
///
/// Gradients accumulate into leaves on [`Tape::backward`]. A second call to
/// `backward` fails with [`AutodiffError::GradientsNotCleared`] until
/// [`Tape::zero_grad`] is called.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads_populated: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads_populated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after `backward`, if it received one.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad matches value shape"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.grads_populated = false;
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let v = self.value(x).map(|e| scale * e + shift);
        let rg = self.needs(x);
        self.push(v, Op::Affine { x, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::zero())
    }

    pub fn add_scalar(&mut self, x: Var, shift: T) -> Var {
        self.affine(x, T::one(), shift)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, T::zero());
        let rg = self.needs(a) || self.needs(b);
        let v = Tensor::new(&[m, n], out)?;
        Ok(self.push(v, Op::MatMul { a, b, m, k, n }, rg))
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [channels] {
                return Err(mismatch(op, self.shape(b), &[channels]));
            }
        }
        Ok(())
    }

    /// `x: [batch, c_in, len]`, `w: [c_out, c_in, kernel]`, `bias: [c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        let len_out = conv::conv_out_len(sx[2], sw[2], stride, padding)
            .ok_or_else(|| invalid("conv1d", format!("kernel {} too long for input {:?}", sw[2], sx)))?;
        self.check_bias("conv1d", bias, sw[0])?;
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            len_in: sx[2],
            len_out,
            kernel: sw[2],
            stride,
            padding,
        };
        let out = conv::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let rg = self.needs(x) || self.needs(w) || bias.is_some_and(|b| self.needs(b));
        let v = Tensor::new(&[geom.batch, geom.c_out, len_out], out)?;
        Ok(self.push(v, Op::Conv1d { x, w, bias, geom }, rg))
    }

    /// Transposed convolution. `x: [batch, c_in, len]`, `w: [c_in, c_out, kernel]`.
    ///
    /// The full output length is `(len - 1) * stride + kernel`; `crop_front`
    /// and `crop_back` samples are removed from its two ends.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        crop_front: usize,
        crop_back: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[0] || sx[2] == 0 {
            return Err(mismatch("conv_transpose1d", &sx, &sw));
        }
        if stride == 0 {
            return Err(invalid("conv_transpose1d", "stride must be positive"));
        }
        let full = ConvTransposeGeom::full_len(sx[2], sw[2], stride);
        if crop_front + crop_back >= full {
            return Err(invalid(
                "conv_transpose1d",
                format!("crop {crop_front}+{crop_back} leaves nothing of length {full}"),
            ));
        }
        self.check_bias("conv_transpose1d", bias, sw[1])?;
        let geom = ConvTransposeGeom {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[1],
            len_in: sx[2],
            kernel: sw[2],
            stride,
            crop_front,
            len_out: full - crop_front - crop_back,
        };
        let out = conv::conv_transpose1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let rg = self.needs(x) || self.needs(w) || bias.is_some_and(|b| self.needs(b));
        let v = Tensor::new(&[geom.batch, geom.c_out, geom.len_out], out)?;
        Ok(self.push(v, Op::ConvTranspose1d { x, w, bias, geom }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| if e > T::zero() { e } else { T::zero() });
        let rg = self.needs(x);
        self.push(v, Op::Relu(x), rg)
    }

    /// Smallest `|input|` over every ReLU recorded so far, or `None` if there
    /// are none. Finite differences with a step above this may straddle a kink.
    pub fn min_relu_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|e| e.abs()))
            .fold(None, |acc: Option<T>, e| Some(acc.map_or(e, |a| if e < a { e } else { a })))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| T::one() / (T::one() + (-e).exp()));
        let rg = self.needs(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    /// Batch normalization over `[batch, channels, len]` (or `[batch, channels]`),
    /// with statistics per channel across batch and length.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
        eps: T,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (batch, channels, len) = match sx.as_slice() {
            [b, c] => (*b, *c, 1),
            [b, c, l] => (*b, *c, *l),
            _ => return Err(invalid("batch_norm", format!("expected 2-D or 3-D input, got {sx:?}"))),
        };
        for p in [gamma, beta] {
            if self.shape(p) != [channels] {
                return Err(mismatch("batch_norm", self.shape(p), &[channels]));
            }
        }
        let count = batch * len;
        let xv = self.value(x).data();
        let (mean, var, train) = match mode {
            BatchNormMode::Train {
                running_mean,
                running_var,
                momentum,
            } => {
                if count < 2 {
                    return Err(invalid("batch_norm", "training mode needs at least two values per channel"));
                }
                if running_mean.len() != channels || running_var.len() != channels {
                    return Err(mismatch("batch_norm", &[running_mean.len()], &[channels]));
                }
                let n = T::from_usize(count).unwrap();
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                for c in 0..channels {
                    let mut s = T::zero();
                    for b in 0..batch {
                        for &e in &xv[(b * channels + c) * len..(b * channels + c + 1) * len] {
                            s += e;
                        }
                    }
                    let mu = s / n;
                    let mut q = T::zero();
                    for b in 0..batch {
                        for &e in &xv[(b * channels + c) * len..(b * channels + c + 1) * len] {
                            q += (e - mu) * (e - mu);
                        }
                    }
                    mean[c] = mu;
                    var[c] = q / n;
                    let unbiased = q / (n - T::one());
                    running_mean[c] = (T::one() - momentum) * running_mean[c] + momentum * mu;
                    running_var[c] = (T::one() - momentum) * running_var[c] + momentum * unbiased;
                }
                (mean, var, true)
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != channels || running_var.len() != channels {
                    return Err(mismatch("batch_norm", &[running_mean.len()], &[channels]));
                }
                (running_mean.to_vec(), running_var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                let r = (b * channels + c) * len..(b * channels + c + 1) * len;
                for i in r {
                    let h = (xv[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = gv[c] * h + bv[c];
                }
            }
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = Tensor::new(&sx, out)?;
        Ok(self.push(
            v,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
                channels,
                len,
            },
            rg,
        ))
    }

    /// Concatenate `[batch, c_i, len]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat_channels", "no inputs"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 3 {
            return Err(invalid("concat_channels", format!("expected 3-D input, got {s0:?}")));
        }
        let (batch, len) = (s0[0], s0[2]);
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 3 || s[0] != batch || s[2] != len {
                return Err(mismatch("concat_channels", &s0, s));
            }
            channels.push(s[1]);
        }
        let total: usize = channels.iter().sum();
        let mut out = Vec::with_capacity(batch * total * len);
        for b in 0..batch {
            for (&p, &c) in parts.iter().zip(&channels) {
                out.extend_from_slice(&self.value(p).data()[b * c * len..(b + 1) * c * len]);
            }
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        let v = Tensor::new(&[batch, total, len], out)?;
        let parts = parts.iter().copied().zip(channels).collect();
        Ok(self.push(v, Op::Concat { parts, batch, len }, rg))
    }

    /// `sqrt(re^2 + im^2)` element-wise.
    pub fn magnitude(&mut self, re: Var, im: Var) -> Result<Var> {
        self.same_shape("magnitude", re, im)?;
        let v = self.zip_map(re, im, |a, b| a.hypot(b));
        let rg = self.needs(re) || self.needs(im);
        Ok(self.push(v, Op::Magnitude { re, im }, rg))
    }

    /// `z / |z|` as a (re, im) pair; zero where `|z|` is below [`MAGNITUDE_EPS`].
    pub fn unit_phasor(&mut self, re: Var, im: Var) -> Result<(Var, Var)> {
        self.same_shape("unit_phasor", re, im)?;
        let eps = T::from_f64_lossy(MAGNITUDE_EPS);
        let vr = self.zip_map(re, im, |a, b| {
            let m = a.hypot(b);
            if m > eps {
                a / m
            } else {
                T::zero()
            }
        });
        let vi = self.zip_map(re, im, |a, b| {
            let m = a.hypot(b);
            if m > eps {
                b / m
            } else {
                T::zero()
            }
        });
        let rg = self.needs(re) || self.needs(im);
        let pr = self.push(vr, Op::PhasorRe { re, im }, rg);
        let pi = self.push(vi, Op::PhasorIm { re, im }, rg);
        Ok((pr, pi))
    }

    pub fn reduce_sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(s), Op::ReduceSum(x), rg)
    }

    pub fn reduce_mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::from_usize(v.numel().max(1)).unwrap();
        let s: T = v.data().iter().copied().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(s / n), Op::ReduceMean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        let rg = self.needs(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Reverse pass from a scalar loss; gradients accumulate on leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        if self.grads_populated {
            return Err(AutodiffError::GradientsNotCleared);
        }
        self.grads_populated = true;
        if !self.needs(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &g);
            for (v, dv) in contributions {
                self.accumulate(v, dv);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, dv: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(dv) {
                    *a += b;
                }
            }
            None => node.grad = Some(dv),
        }
    }

    fn input_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, g.iter().map(|&e| -e).collect()));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.iter().zip(val(*b)).map(|(&e, &y)| e * y).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, g.iter().zip(val(*a)).map(|(&e, &x)| e * x).collect()));
                }
            }
            Op::Affine { x, scale } => {
                out.push((*x, g.iter().map(|&e| e * *scale).collect()));
            }
            Op::MatMul { a, b, m, k, n } => {
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(*m, *n, *k, g, false, val(*b), true, &mut da, T::zero());
                    out.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(*k, *m, *n, val(*a), true, g, false, &mut db, T::zero());
                    out.push((*b, db));
                }
            }
            Op::Conv1d { x, w, bias, geom } => {
                let need = (self.needs(*x), self.needs(*w), bias.is_some_and(|b| self.needs(b)));
                let grads = conv::conv1d_backward(val(*x), val(*w), g, geom, need);
                push_conv_grads(&mut out, *x, *w, *bias, grads);
            }
            Op::ConvTranspose1d { x, w, bias, geom } => {
                let need = (self.needs(*x), self.needs(*w), bias.is_some_and(|b| self.needs(b)));
                let grads = conv::conv_transpose1d_backward(val(*x), val(*w), g, geom, need);
                push_conv_grads(&mut out, *x, *w, *bias, grads);
            }
            Op::Relu(x) => {
                let xv = val(*x);
                out.push((*x, g.iter().zip(xv).map(|(&e, &v)| if v > T::zero() { e } else { T::zero() }).collect()));
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                out.push((*x, g.iter().zip(y).map(|(&e, &s)| e * s * (T::one() - s)).collect()));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
                channels,
                len,
            } => {
                let (channels, len) = (*channels, *len);
                let batch = g.len() / (channels * len);
                let gv = val(*gamma);
                let mut dgamma = vec![T::zero(); channels];
                let mut dbeta = vec![T::zero(); channels];
                for b in 0..batch {
                    for c in 0..channels {
                        for idx in (b * channels + c) * len..(b * channels + c + 1) * len {
                            dgamma[c] += g[idx] * xhat[idx];
                            dbeta[c] += g[idx];
                        }
                    }
                }
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    let n = T::from_usize(batch * len).unwrap();
                    for c in 0..channels {
                        let k = gv[c] * inv_std[c];
                        for b in 0..batch {
                            for idx in (b * channels + c) * len..(b * channels + c + 1) * len {
                                dx[idx] = if *train {
                                    k * (g[idx] - dbeta[c] / n - xhat[idx] * dgamma[c] / n)
                                } else {
                                    k * g[idx]
                                };
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                if self.needs(*gamma) {
                    out.push((*gamma, dgamma));
                }
                if self.needs(*beta) {
                    out.push((*beta, dbeta));
                }
            }
            Op::Concat { parts, batch, len } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, c) in parts {
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(batch * c * len);
                        for b in 0..*batch {
                            let start = (b * total + offset) * len;
                            dp.extend_from_slice(&g[start..start + c * len]);
                        }
                        out.push((p, dp));
                    }
                    offset += c;
                }
            }
            Op::Magnitude { re, im } => {
                let eps = T::from_f64_lossy(MAGNITUDE_EPS);
                let m = node.value.data();
                let (r, q) = (val(*re), val(*im));
                let ratio = |num: &[T]| -> Vec<T> {
                    g.iter()
                        .zip(num)
                        .zip(m)
                        .map(|((&e, &a), &mm)| if mm > eps { e * a / mm } else { T::zero() })
                        .collect()
                };
                if self.needs(*re) {
                    out.push((*re, ratio(r)));
                }
                if self.needs(*im) {
                    out.push((*im, ratio(q)));
                }
            }
            Op::PhasorRe { re, im } | Op::PhasorIm { re, im } => {
                // d(a/m)/da = b^2/m^3, d(a/m)/db = -ab/m^3, d(b/m)/da = -ab/m^3, d(b/m)/db = a^2/m^3
                let is_re = matches!(node.op, Op::PhasorRe { .. });
                let eps = T::from_f64_lossy(MAGNITUDE_EPS);
                let (r, q) = (val(*re), val(*im));
                let n = g.len();
                let mut dre = vec![T::zero(); n];
                let mut dim = vec![T::zero(); n];
                for idx in 0..n {
                    let (a, b) = (r[idx], q[idx]);
                    let m = a.hypot(b);
                    if m <= eps {
                        continue;
                    }
                    let m3 = m * m * m;
                    if is_re {
                        dre[idx] = g[idx] * b * b / m3;
                        dim[idx] = -g[idx] * a * b / m3;
                    } else {
                        dre[idx] = -g[idx] * a * b / m3;
                        dim[idx] = g[idx] * a * a / m3;
                    }
                }
                if self.needs(*re) {
                    out.push((*re, dre));
                }
                if self.needs(*im) {
                    out.push((*im, dim));
                }
            }
            Op::ReduceSum(x) => {
                out.push((*x, vec![g[0]; self.nodes[x.0].value.numel()]));
            }
            Op::ReduceMean(x) => {
                let n = self.nodes[x.0].value.numel();
                let d = g[0] / T::from_usize(n.max(1)).unwrap();
                out.push((*x, vec![d; n]));
            }
            Op::Reshape(x) => {
                out.push((*x, g.to_vec()));
            }
        }
        out
    }
}

fn push_conv_grads<T>(out: &mut Vec<(Var, Vec<T>)>, x: Var, w: Var, bias: Option<Var>, grads: conv::ConvGrads<T>) {
    if let Some(dx) = grads.dx {
        out.push((x, dx));
    }
    if let Some(dw) = grads.dw {
        out.push((w, dw));
    }
    if let (Some(b), Some(db)) = (bias, grads.db) {
        out.push((b, db));
    }
}
