//! Value-level kernels for the non-convolutional operations.

use super::{Real, Tensor};
use crate::error::{shape_err, Result};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Logistic function clamped into the open interval (0, 1), so that a
/// saturated unit never reads as exactly 0 or 1.
pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    let one = T::one();
    let y = if v >= T::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() / (one + one);
    y.max(T::min_positive_value()).min(hi)
}

/// Outer/axis/inner extents for a reduction along `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(shape_err!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = axis_split(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..n {
                m = m.max(src[at(k)]);
            }
            let mut total = T::zero();
            for k in 0..n {
                let e = (src[at(k)] - m).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..n {
                out[at(k)] /= total;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// 2×2 stride-2 max pooling. Returns the pooled values and, per output
/// element, the flat input index that attained the maximum (first on ties).
pub(crate) fn max_pool2_with_argmax<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    block_max(x, 2, "local max pooling")
}

pub fn local_max_pool2d<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    max_pool2_with_argmax(x).map(|(t, _)| t)
}

/// Max over non-overlapping `block×block` tiles of each channel.
pub(crate) fn block_max<T: Real>(x: &Tensor<T>, block: usize, what: &str) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = x.dims3()?;
    if h % block != 0 || w % block != 0 {
        return Err(shape_err!(
            "{what} needs spatial dims divisible by {block}, got {h}×{w}"
        ));
    }
    let (oh, ow) = (h / block, w / block);
    let src = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for by in 0..oh {
            for bx in 0..ow {
                let mut best = base + by * block * w + bx * block;
                for y in by * block..(by + 1) * block {
                    for xx in bx * block..(bx + 1) * block {
                        let idx = base + y * w + xx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                out.push(src[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[c, oh, ow], out)?, arg))
}

/// Per-channel maximum over all spatial positions.
pub(crate) fn channel_max<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = x.dims3()?;
    let plane = h * w;
    let src = x.data();
    let mut out = Vec::with_capacity(c);
    let mut arg = Vec::with_capacity(c);
    for ch in 0..c {
        let s = &src[ch * plane..(ch + 1) * plane];
        let best = super::argmax(s);
        out.push(s[best]);
        arg.push(ch * plane + best);
    }
    Ok((Tensor::new(&[c], out)?, arg))
}

/// Per-channel sum over all spatial positions.
pub(crate) fn channel_sum<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    let plane = h * w;
    let src = x.data();
    let out = (0..c)
        .map(|ch| src[ch * plane..(ch + 1) * plane].iter().copied().sum())
        .collect();
    Tensor::new(&[c], out)
}
