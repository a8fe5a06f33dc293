//! Reverse-mode differentiation over an append-only operation tape.
//!
//! Every operation pushes its output node after its inputs, so the node list
//! is already in topological order and backward is a single reverse sweep.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::conv::{conv_backward, conv_forward, ConvGeom, Padding};
use super::ops::{self, axis_split};
use super::{Real, Tensor};
use crate::error::{contract_err, shape_err, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    /// `out[i] = x[index[i]]`; backs every max-style pooling.
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    ChannelMean(Var),
    ChannelSum(Var),
    ChannelNormalize(Var),
    Reshape(Var),
    Linear {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Sum(Var),
    Nll {
        x: Var,
        class: usize,
        clamped: bool,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Single-owner record of a forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), dilation, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.c_out] {
                return Err(shape_err!(
                    "bias shape {:?} does not match {} output channels",
                    self.shape(b),
                    geom.c_out
                ));
            }
        }
        let out = conv_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&[geom.c_out, geom.oh, geom.ow], out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(
            value,
            &inputs,
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            },
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, &[a, b], Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, &[x], Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        self.push(value, &[x], Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = ops::sigmoid(self.value(x));
        self.push(value, &[x], Op::Sigmoid(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = ops::softmax(self.value(x), axis)?;
        Ok(self.push(value, &[x], Op::Softmax { x, axis }))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (value, index) = ops::max_pool2_with_argmax(self.value(x))?;
        Ok(self.push(value, &[x], Op::Gather { x, index }))
    }

    /// Max over `block×block` tiles of each channel.
    pub fn block_max(&mut self, x: Var, block: usize) -> Result<Var> {
        let (value, index) = ops::block_max(self.value(x), block, "block max pooling")?;
        Ok(self.push(value, &[x], Op::Gather { x, index }))
    }

    /// `c×h×w → c`, maximum of each channel.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (value, index) = ops::channel_max(self.value(x))?;
        Ok(self.push(value, &[x], Op::Gather { x, index }))
    }

    /// `c×h×w → c`, mean of each channel.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (_, h, w) = self.value(x).dims3()?;
        let n = T::from_usize(h * w).expect("plane size fits in a float");
        let value = ops::channel_sum(self.value(x))?.map(|s| s / n);
        Ok(self.push(value, &[x], Op::ChannelMean(x)))
    }

    /// `c×h×w → c`, sum of each channel.
    pub fn channel_sum(&mut self, x: Var) -> Result<Var> {
        let value = ops::channel_sum(self.value(x))?;
        Ok(self.push(value, &[x], Op::ChannelSum(x)))
    }

    /// Divides every channel by its own spatial sum.
    pub fn channel_normalize(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        let sums = ops::channel_sum(self.value(x))?;
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len());
        for ch in 0..c {
            let s = sums.data()[ch];
            if s <= T::zero() {
                return Err(contract_err!(
                    "channel {ch} has non-positive sum and cannot be normalized"
                ));
            }
            out.extend(src[ch * plane..(ch + 1) * plane].iter().map(|&v| v / s));
        }
        let value = Tensor::new(&[c, h, w], out)?;
        Ok(self.push(value, &[x], Op::ChannelNormalize(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, &[x], Op::Reshape(x)))
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.reshape(x, &[n]).expect("flattening preserves the element count")
    }

    /// `W·x + b` with `W` of shape `out×in` and `x` a vector of length `in`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (rows, cols) = match *self.shape(weight) {
            [r, c] => (r, c),
            _ => return Err(shape_err!("linear weight must be rank 2, got {:?}", self.shape(weight))),
        };
        if self.shape(x) != [cols] {
            return Err(shape_err!(
                "linear layer expects {cols} inputs, got shape {:?}",
                self.shape(x)
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [rows] {
                return Err(shape_err!("linear bias must have {rows} entries"));
            }
        }
        let mut out = match bias {
            Some(b) => self.value(b).data().to_vec(),
            None => vec![T::zero(); rows],
        };
        T::gemm(
            rows,
            cols,
            1,
            self.value(weight).data(),
            false,
            self.value(x).data(),
            false,
            T::one(),
            &mut out,
        );
        let value = Tensor::new(&[rows], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(value, &inputs, Op::Linear { x, weight, bias }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, &[x], Op::Sum(x))
    }

    /// Negative log of the probability of `class` after renormalizing the
    /// vector `x` to sum to one; the probability is clamped below at `floor`.
    pub fn nll(&mut self, x: Var, class: usize, floor: T) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 1 {
            return Err(shape_err!("nll expects a score vector, got {:?}", v.shape()));
        }
        if class >= v.len() {
            return Err(contract_err!(
                "class {class} out of range for {} scores",
                v.len()
            ));
        }
        let total = v.sum();
        let p = if total > T::zero() {
            v.data()[class] / total
        } else {
            T::zero()
        };
        let clamped = !(p >= floor);
        // Non-finite scores must surface as a non-finite loss, not hit the clamp.
        let loss = if v.all_finite() {
            -(if clamped { floor } else { p }).ln()
        } else {
            T::nan()
        };
        Ok(self.push(Tensor::scalar(loss), &[x], Op::Nll { x, class, clamped }))
    }

    /// Fingerprint of every non-smooth decision taken in the forward pass
    /// (ReLU activity, pooling winners, loss clamping). Two evaluations with
    /// equal fingerprints lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) => {
                    i.hash(&mut h);
                    for v in self.value(*x).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::Gather { index, .. } => {
                    i.hash(&mut h);
                    index.hash(&mut h);
                }
                Op::Nll { clamped, .. } => {
                    i.hash(&mut h);
                    clamped.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Propagates d(loss)/d(node) from a rank-0 loss back to every leaf that
    /// requires a gradient. Each recorded operation is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).rank() != 0 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut pending: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads: leaves });
        }
        pending[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    leaves[i] = Some(Tensor::new(node.value.shape(), g)?);
                }
                Op::Conv {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let need = (
                        self.requires_grad(*input),
                        self.requires_grad(*kernel),
                        bias.is_some_and(|b| self.requires_grad(b)),
                    );
                    let grads = conv_backward(
                        geom,
                        self.value(*input).data(),
                        self.value(*kernel).data(),
                        &g,
                        need,
                    );
                    self.accumulate(&mut pending, *input, grads.input);
                    self.accumulate(&mut pending, *kernel, grads.kernel);
                    if let Some(b) = bias {
                        self.accumulate(&mut pending, *b, grads.bias);
                    }
                }
                Op::Add(a, b) => {
                    if self.requires_grad(*a) && self.requires_grad(*b) {
                        self.accumulate(&mut pending, *b, Some(g.clone()));
                    } else if self.requires_grad(*b) {
                        self.accumulate(&mut pending, *b, Some(g));
                        continue;
                    }
                    self.accumulate(&mut pending, *a, Some(g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.requires_grad(*a) {
                        let da = g.iter().zip(bv).map(|(&gi, &y)| gi * y).collect();
                        self.accumulate(&mut pending, *a, Some(da));
                    }
                    if self.requires_grad(*b) {
                        let db = g.iter().zip(av).map(|(&gi, &x)| gi * x).collect();
                        self.accumulate(&mut pending, *b, Some(db));
                    }
                }
                Op::Scale(x, f) => {
                    let dx = g.iter().map(|&gi| gi * *f).collect();
                    self.accumulate(&mut pending, *x, Some(dx));
                }
                Op::Relu(x) => {
                    let y = node.value.data();
                    let dx = g
                        .iter()
                        .zip(y)
                        .map(|(&gi, &yi)| if yi > T::zero() { gi } else { T::zero() })
                        .collect();
                    self.accumulate(&mut pending, *x, Some(dx));
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let one = T::one();
                    let dx = g
                        .iter()
                        .zip(y)
                        .map(|(&gi, &yi)| gi * yi * (one - yi))
                        .collect();
                    self.accumulate(&mut pending, *x, Some(dx));
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.data();
                    let (outer, n, inner) = axis_split(node.value.shape(), *axis)?;
                    let mut dx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + j;
                            let dot: T = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..n {
                                dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                    self.accumulate(&mut pending, *x, Some(dx));
                }
                Op::Gather { x, index } => {
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    for (&src, &gi) in index.iter().zip(&g) {
                        dx[src] += gi;
                    }
                    self.accumulate(&mut pending, *x, Some(dx));
                }
                Op::ChannelMean(x) | Op::ChannelSum(x) => {
                    let (c, h, w) = self.value(*x).dims3()?;
                    let plane = h * w;
                    let scale = match node.op {
                        Op::ChannelMean(_) => T::one() / T::from_usize(plane).expect("plane size"),
                        _ => T::one(),
                    };
                    let mut dx = Vec::with_capacity(c * plane);
                    for &gc in &g {
                        dx.extend(std::iter::repeat_n(gc * scale, plane));
                    }
                    self.accumulate(&mut pending, *x, Some(dx));
                }
                Op::ChannelNormalize(x) => {
                    let xv = self.value(*x);
                    let (c, h, w) = xv.dims3()?;
                    let plane = h * w;
                    let y = node.value.data();
                    let mut dx = vec![T::zero(); c * plane];
                    for ch in 0..c {
                        let r = ch * plane..(ch + 1) * plane;
                        let s: T = xv.data()[r.clone()].iter().copied().sum();
                        let dot: T = g[r.clone()].iter().zip(&y[r.clone()]).map(|(&a, &b)| a * b).sum();
                        for k in r {
                            dx[k] = (g[k] - dot) / s;
                        }
                    }
                    self.accumulate(&mut pending, *x, Some(dx));
                }
                Op::Reshape(x) => {
                    self.accumulate(&mut pending, *x, Some(g));
                }
                Op::Linear { x, weight, bias } => {
                    let (rows, cols) = (self.shape(*weight)[0], self.shape(*weight)[1]);
                    if self.requires_grad(*x) {
                        let mut dx = vec![T::zero(); cols];
                        T::gemm(cols, rows, 1, self.value(*weight).data(), true, &g, false, T::zero(), &mut dx);
                        self.accumulate(&mut pending, *x, Some(dx));
                    }
                    if self.requires_grad(*weight) {
                        let mut dw = vec![T::zero(); rows * cols];
                        T::gemm(rows, 1, cols, &g, false, self.value(*x).data(), false, T::zero(), &mut dw);
                        self.accumulate(&mut pending, *weight, Some(dw));
                    }
                    if let Some(b) = bias {
                        self.accumulate(&mut pending, *b, Some(g));
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    self.accumulate(&mut pending, *x, Some(vec![g[0]; n]));
                }
                Op::Nll { x, class, clamped } => {
                    let xv = self.value(*x).data();
                    let dx = if *clamped {
                        vec![T::zero(); xv.len()]
                    } else {
                        let total: T = xv.iter().copied().sum();
                        let inv = T::one() / total;
                        (0..xv.len())
                            .map(|j| {
                                let d = if j == *class { inv - T::one() / xv[j] } else { inv };
                                g[0] * d
                            })
                            .collect()
                    };
                    self.accumulate(&mut pending, *x, Some(dx));
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn accumulate(&self, pending: &mut [Option<Vec<T>>], target: Var, contribution: Option<Vec<T>>) {
        let Some(c) = contribution else { return };
        if !self.requires_grad(target) {
            return;
        }
        match &mut pending[target.0] {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(c) {
                    *e += v;
                }
            }
            slot => *slot = Some(c),
        }
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

/// Gradients of the leaves reached by a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
