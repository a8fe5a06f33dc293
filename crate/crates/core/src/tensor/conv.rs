//! Dilated 2-D cross-correlation via im2col and a single matrix product.

use super::{Real, Tensor};
use crate::error::{shape_err, Result};

/// Border handling of a convolution. `Same` pads with
/// `dilation * (k - 1) / 2` zeros per side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Spatial size after a stride-1 convolution.
pub fn conv_output_dim(input: usize, kernel: usize, dilation: usize, padding: Padding) -> Result<usize> {
    if dilation == 0 {
        return Err(shape_err!("dilation must be at least 1"));
    }
    let span = dilation * (kernel - 1);
    match padding {
        Padding::Same => {
            if kernel % 2 == 0 {
                return Err(shape_err!("same padding needs an odd kernel, got {kernel}"));
            }
            Ok(input)
        }
        Padding::Valid => {
            if input <= span {
                Err(shape_err!(
                    "valid convolution of size {input} with span {} leaves no output",
                    span + 1
                ))
            } else {
                Ok(input - span)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub dilation: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], dilation: usize, padding: Padding) -> Result<Self> {
        let (c_in, h, w) = match *input {
            [c, h, w] => (c, h, w),
            _ => return Err(shape_err!("conv2d input must be C×P×Q, got {input:?}")),
        };
        let (c_out, k_in, kh, kw) = match *kernel {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(shape_err!("conv2d kernel must be rank 4, got {kernel:?}")),
        };
        if k_in != c_in {
            return Err(shape_err!(
                "kernel expects {k_in} input channels but input has {c_in}"
            ));
        }
        let oh = conv_output_dim(h, kh, dilation, padding)?;
        let ow = conv_output_dim(w, kw, dilation, padding)?;
        let (pad_h, pad_w) = match padding {
            Padding::Same => (dilation * (kh - 1) / 2, dilation * (kw - 1) / 2),
            Padding::Valid => (0, 0),
        };
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            dilation,
            pad_h,
            pad_w,
            oh,
            ow,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// A 1×1 kernel without padding reads the input directly as its column
    /// matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad_h == 0 && self.pad_w == 0
    }

    /// Valid output columns `[lo, hi)` for kernel column `j`, and the input
    /// offset between them.
    fn col_range(&self, j: usize) -> (usize, usize, isize) {
        let dx = (j * self.dilation) as isize - self.pad_w as isize;
        let lo = (-dx).max(0) as usize;
        let hi = (self.w as isize - dx).clamp(0, self.ow as isize) as usize;
        (lo.min(hi), hi, dx)
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.out_plane();
    let mut col = vec![T::zero(); g.patch_len() * plane];
    for c in 0..g.c_in {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            let dy = (i * g.dilation) as isize - g.pad_h as isize;
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (lo, hi, dx) = g.col_range(j);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let s = iy as usize * g.w;
                    let a = (lo as isize + dx) as usize;
                    let b = (hi as isize + dx) as usize;
                    dst[oy * g.ow + lo..oy * g.ow + hi].copy_from_slice(&src[s + a..s + b]);
                }
            }
        }
    }
    col
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx_out: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c_in {
        let dst = &mut dx_out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            let dy = (i * g.dilation) as isize - g.pad_h as isize;
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &col[row * plane..(row + 1) * plane];
                let (lo, hi, dx) = g.col_range(j);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let s = iy as usize * g.w;
                    let a = (lo as isize + dx) as usize;
                    let seg = &src[oy * g.ow + lo..oy * g.ow + hi];
                    for (d, &v) in dst[s + a..s + a + seg.len()].iter_mut().zip(seg) {
                        *d += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let plane = g.out_plane();
    let mut out = vec![T::zero(); g.c_out * plane];
    if g.is_pointwise() {
        T::gemm(g.c_out, g.c_in, plane, kernel, false, input, false, T::zero(), &mut out);
    } else {
        let col = im2col(input, g);
        T::gemm(g.c_out, g.patch_len(), plane, kernel, false, &col, false, T::zero(), &mut out);
    }
    if let Some(b) = bias {
        for (o, &bv) in b.iter().enumerate() {
            for v in &mut out[o * plane..(o + 1) * plane] {
                *v += bv;
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let (need_input, need_kernel, need_bias) = need;

    let col = if need_kernel && !g.is_pointwise() {
        Some(im2col(input, g))
    } else {
        None
    };
    let kernel_grad = need_kernel.then(|| {
        let mut dk = vec![T::zero(); g.c_out * k];
        let cols = col.as_deref().unwrap_or(input);
        T::gemm(g.c_out, plane, k, grad_out, false, cols, true, T::zero(), &mut dk);
        dk
    });
    drop(col);

    let input_grad = need_input.then(|| {
        if g.is_pointwise() {
            let mut dx = vec![T::zero(); g.c_in * plane];
            T::gemm(k, g.c_out, plane, kernel, true, grad_out, false, T::zero(), &mut dx);
            dx
        } else {
            let mut dcol = vec![T::zero(); k * plane];
            T::gemm(k, g.c_out, plane, kernel, true, grad_out, false, T::zero(), &mut dcol);
            let mut dx = vec![T::zero(); g.c_in * g.h * g.w];
            col2im(&dcol, g, &mut dx);
            dx
        }
    });

    let bias_grad = need_bias.then(|| {
        (0..g.c_out)
            .map(|o| grad_out[o * plane..(o + 1) * plane].iter().copied().sum())
            .collect()
    });

    ConvGrads {
        input: input_grad,
        kernel: kernel_grad,
        bias: bias_grad,
    }
}

/// Stride-1 dilated cross-correlation of a `C_in×P×Q` input with a
/// `C_out×C_in×k_h×k_w` kernel.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    dilation: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), dilation, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.c_out] {
            return Err(shape_err!(
                "bias shape {:?} does not match {} output channels",
                b.shape(),
                g.c_out
            ));
        }
    }
    let out = conv_forward(&g, input.data(), kernel.data(), bias.map(|b| b.data()));
    Tensor::new(&[g.c_out, g.oh, g.ow], out)
}

/// Inserts `dilation - 1` zeros between kernel taps, so that an undilated
/// convolution with the result equals a dilated one with the original.
pub fn upsample_kernel_zeros<T: Real>(kernel: &Tensor<T>, dilation: usize) -> Tensor<T> {
    let s = kernel.shape();
    let (o, i, kh, kw) = (s[0], s[1], s[2], s[3]);
    let (uh, uw) = (dilation * (kh - 1) + 1, dilation * (kw - 1) + 1);
    let mut out = Tensor::zeros(&[o, i, uh, uw]);
    for a in 0..o {
        for b in 0..i {
            for y in 0..kh {
                for x in 0..kw {
                    out.set(&[a, b, y * dilation, x * dilation], kernel.at(&[a, b, y, x]));
                }
            }
        }
    }
    out
}
