use crate::error::{invalid, shape_err, Result};
use crate::gemm::gemm;
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Per-side zero padding (or, for transposed convolution, per-side trim).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const ZERO: Padding = Padding::uniform(0);

    pub const fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub const fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Self {
            top,
            bottom,
            left,
            right,
        }
    }

    fn plus(self, other: Padding) -> Padding {
        Padding::new(
            self.top + other.top,
            self.bottom + other.bottom,
            self.left + other.left,
            self.right + other.right,
        )
    }
}

/// Output extent of a convolution along one axis, `None` if the window does
/// not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad_lo: usize, pad_hi: usize) -> Option<usize> {
    let padded = input + pad_lo + pad_hi;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis after removing
/// `trim_lo + trim_hi` border samples, `None` if nothing would remain.
pub fn conv_transpose_output_extent(input: usize, kernel: usize, stride: usize, trim_lo: usize, trim_hi: usize) -> Option<usize> {
    let full = (input - 1) * stride + kernel;
    full.checked_sub(trim_lo + trim_hi).filter(|&e| e > 0)
}

/// Sliding-window geometry shared by the convolution kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub stride: usize,
    pub pad: Padding,
    pub kh: usize,
    pub kw: usize,
}

/// Extents of one image plane and of the window grid sliding over it.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Frame {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Unfolds a `c×h×w` image into `[c·kh·kw, oh·ow]` columns.
pub(crate) fn im2col(img: &[f64], f: Frame, geom: &ConvGeom, cols: &mut [f64]) {
    let (kh, kw, s) = (geom.kh, geom.kw, geom.stride);
    let ncol = f.oh * f.ow;
    for ci in 0..f.c {
        let plane = &img[ci * f.h * f.w..(ci + 1) * f.h * f.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ncol;
                for oy in 0..f.oh {
                    let iy = (oy * s + ky) as isize - geom.pad.top as isize;
                    let dst = &mut cols[row + oy * f.ow..row + (oy + 1) * f.ow];
                    if iy < 0 || iy >= f.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * f.w..(iy as usize + 1) * f.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - geom.pad.left as isize;
                        *d = if ix < 0 || ix >= f.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds columns back, summing overlaps into `img`.
pub(crate) fn col2im(cols: &[f64], f: Frame, geom: &ConvGeom, img: &mut [f64]) {
    let (kh, kw, s) = (geom.kh, geom.kw, geom.stride);
    let ncol = f.oh * f.ow;
    for ci in 0..f.c {
        let plane = &mut img[ci * f.h * f.w..(ci + 1) * f.h * f.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ncol;
                for oy in 0..f.oh {
                    let iy = (oy * s + ky) as isize - geom.pad.top as isize;
                    if iy < 0 || iy >= f.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * f.ow..row + (oy + 1) * f.ow];
                    let dst = &mut plane[iy as usize * f.w..(iy as usize + 1) * f.w];
                    for (ox, v) in src.iter().enumerate() {
                        let ix = (ox * s + kx) as isize - geom.pad.left as isize;
                        if ix >= 0 && ix < f.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn check_nchw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => shape_err(op, format!("expected an N×C×H×W tensor, got {s:?}")),
    }
}

/// Validates `input`/`weight` for a forward convolution and returns the
/// sample count, geometry and frame.
pub(crate) fn conv_setup(
    op: &'static str,
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, ConvGeom, Frame)> {
    let (n, c, h, w) = check_nchw(op, input)?;
    let (co, wc, kh, kw) = check_nchw(op, weight)?;
    if wc != c {
        return shape_err(
            op,
            format!("input has {c} channels but weight {:?} expects {wc}", weight.shape()),
        );
    }
    if stride == 0 {
        return invalid(op, "stride must be >= 1");
    }
    let oh = conv_output_extent(h, kh, stride, padding.top, padding.bottom);
    let ow = conv_output_extent(w, kw, stride, padding.left, padding.right);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return shape_err(
            op,
            format!("padded input {h}×{w} (padding {padding:?}) smaller than kernel {kh}×{kw}"),
        );
    };
    let geom = ConvGeom {
        stride,
        pad: padding,
        kh,
        kw,
    };
    Ok((n, co, geom, Frame { c, h, w, oh, ow }))
}

impl Graph {
    /// 2-D cross-correlation of `input [N,C,H,W]` with `weight [C',C,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (x, wt) = (self.value(input), self.value(weight));
        let (n, co, geom, f) = conv_setup("conv2d", x, wt, stride, padding)?;
        let ck = f.c * geom.kh * geom.kw;
        let (ncol, in_len) = (f.oh * f.ow, f.c * f.h * f.w);
        let mut out = Tensor::zeros(vec![n, co, f.oh, f.ow]);
        let mut cols = vec![0.0; ck * ncol];
        for s in 0..n {
            im2col(&x.data()[s * in_len..(s + 1) * in_len], f, &geom, &mut cols);
            gemm(
                co,
                ck,
                ncol,
                wt.data(),
                false,
                &cols,
                false,
                &mut out.data_mut()[s * co * ncol..(s + 1) * co * ncol],
                false,
            );
        }
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                geom,
            },
            &[input, weight],
        ))
    }

    /// Transposed convolution (the adjoint of [`Graph::conv2d`]) with
    /// `weight [C_in, C_out, kh, kw]`. The full output `(H-1)·stride + k` is
    /// trimmed by `padding` and then by `crop` on each side.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        padding: Padding,
        crop: Padding,
    ) -> Result<Var> {
        let op = "conv_transpose2d";
        let (x, wt) = (self.value(input), self.value(weight));
        let (n, ci, h, w) = check_nchw(op, x)?;
        let (wci, co, kh, kw) = check_nchw(op, wt)?;
        if wci != ci {
            return shape_err(
                op,
                format!("input has {ci} channels but weight {:?} expects {wci}", wt.shape()),
            );
        }
        if stride == 0 {
            return invalid(op, "stride must be >= 1");
        }
        let trim = padding.plus(crop);
        let oh = conv_transpose_output_extent(h, kh, stride, trim.top, trim.bottom);
        let ow = conv_transpose_output_extent(w, kw, stride, trim.left, trim.right);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return invalid(
                op,
                format!("trimming {trim:?} leaves no output for a {h}×{w} input and {kh}×{kw} kernel"),
            );
        };
        let geom = ConvGeom {
            stride,
            pad: trim,
            kh,
            kw,
        };
        // Viewed from the output side this is the conv2d frame: image `oh×ow`
        // with `co` channels, window grid `h×w`.
        let f = Frame {
            c: co,
            h: oh,
            w: ow,
            oh: h,
            ow: w,
        };
        let ck = co * kh * kw;
        let hw = h * w;
        let mut out = Tensor::zeros(vec![n, co, oh, ow]);
        let mut cols = vec![0.0; ck * hw];
        let out_len = co * oh * ow;
        for s in 0..n {
            gemm(
                ck,
                ci,
                hw,
                wt.data(),
                true,
                &x.data()[s * ci * hw..(s + 1) * ci * hw],
                false,
                &mut cols,
                false,
            );
            col2im(&cols, f, &geom, &mut out.data_mut()[s * out_len..(s + 1) * out_len]);
        }
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                input,
                weight,
                geom,
            },
            &[input, weight],
        ))
    }
}

pub(crate) fn conv2d_backward(g: &Graph, input: Var, weight: Var, geom: &ConvGeom, grad_out: &Tensor) -> Vec<(Var, Tensor)> {
    let (x, wt) = (g.value(input), g.value(weight));
    let (n, c, h, w) = check_nchw("conv2d", x).unwrap();
    let co = wt.shape()[0];
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
    let f = Frame { c, h, w, oh, ow };
    let ck = c * geom.kh * geom.kw;
    let (ncol, in_len) = (oh * ow, c * h * w);
    let need_x = g.requires_grad(input);
    let need_w = g.requires_grad(weight);
    let mut dx = need_x.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut dw = need_w.then(|| Tensor::zeros(wt.shape().to_vec()));
    let mut cols = vec![0.0; ck * ncol];
    for s in 0..n {
        let go = &grad_out.data()[s * co * ncol..(s + 1) * co * ncol];
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[s * in_len..(s + 1) * in_len], f, geom, &mut cols);
            gemm(co, ncol, ck, go, false, &cols, true, dw.data_mut(), true);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(ck, co, ncol, wt.data(), true, go, false, &mut cols, false);
            col2im(&cols, f, geom, &mut dx.data_mut()[s * in_len..(s + 1) * in_len]);
        }
    }
    let mut out = Vec::new();
    if let Some(dx) = dx {
        out.push((input, dx));
    }
    if let Some(dw) = dw {
        out.push((weight, dw));
    }
    out
}

pub(crate) fn conv_transpose2d_backward(
    g: &Graph,
    input: Var,
    weight: Var,
    geom: &ConvGeom,
    grad_out: &Tensor,
) -> Vec<(Var, Tensor)> {
    let (x, wt) = (g.value(input), g.value(weight));
    let (n, ci, h, w) = check_nchw("conv_transpose2d", x).unwrap();
    let co = wt.shape()[1];
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
    let f = Frame {
        c: co,
        h: oh,
        w: ow,
        oh: h,
        ow: w,
    };
    let ck = co * geom.kh * geom.kw;
    let hw = h * w;
    let out_len = co * oh * ow;
    let need_x = g.requires_grad(input);
    let need_w = g.requires_grad(weight);
    let mut dx = need_x.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut dw = need_w.then(|| Tensor::zeros(wt.shape().to_vec()));
    let mut cols = vec![0.0; ck * hw];
    for s in 0..n {
        im2col(&grad_out.data()[s * out_len..(s + 1) * out_len], f, geom, &mut cols);
        if let Some(dx) = dx.as_mut() {
            gemm(ci, ck, hw, wt.data(), false, &cols, false, &mut dx.data_mut()[s * ci * hw..(s + 1) * ci * hw], false);
        }
        if let Some(dw) = dw.as_mut() {
            gemm(ci, hw, ck, &x.data()[s * ci * hw..(s + 1) * ci * hw], false, &cols, true, dw.data_mut(), true);
        }
    }
    let mut out = Vec::new();
    if let Some(dx) = dx {
        out.push((input, dx));
    }
    if let Some(dw) = dw {
        out.push((weight, dw));
    }
    out
}
