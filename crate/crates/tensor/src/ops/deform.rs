//! Deformable convolution: each kernel tap samples the input at its regular
//! grid position plus a learned fractional offset, using bilinear
//! interpolation with zeros outside the image.

use crate::error::{shape_err, Result};
use crate::gemm::gemm;
use crate::graph::{Graph, Op, Var};
use crate::ops::conv::{check_nchw, conv_setup, ConvGeom, Frame, Padding};
use crate::tensor::Tensor;

struct Corners {
    y0: isize,
    x0: isize,
    ly: f64,
    lx: f64,
}

impl Corners {
    fn at(py: f64, px: f64) -> Self {
        let (fy, fx) = (py.floor(), px.floor());
        Self {
            y0: fy as isize,
            x0: fx as isize,
            ly: py - fy,
            lx: px - fx,
        }
    }

    /// Corner values in order (y0,x0), (y0,x1), (y1,x0), (y1,x1).
    fn values(&self, plane: &[f64], h: usize, w: usize) -> [f64; 4] {
        let get = |y: isize, x: isize| {
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                plane[y as usize * w + x as usize]
            } else {
                0.0
            }
        };
        [
            get(self.y0, self.x0),
            get(self.y0, self.x0 + 1),
            get(self.y0 + 1, self.x0),
            get(self.y0 + 1, self.x0 + 1),
        ]
    }

    fn weights(&self) -> [f64; 4] {
        let (ly, lx) = (self.ly, self.lx);
        [(1.0 - ly) * (1.0 - lx), (1.0 - ly) * lx, ly * (1.0 - lx), ly * lx]
    }
}

fn bilinear(plane: &[f64], h: usize, w: usize, py: f64, px: f64) -> f64 {
    let c = Corners::at(py, px);
    let v = c.values(plane, h, w);
    if c.ly == 0.0 && c.lx == 0.0 {
        // Integer position: exactly the grid sample, as in a standard conv.
        return v[0];
    }
    c.weights().iter().zip(&v).map(|(a, b)| a * b).sum()
}

/// Bilinearly sampled columns in the [`im2col`](super::conv::im2col) layout.
fn sample_columns(img: &[f64], offsets: &[f64], f: Frame, geom: &ConvGeom, cols: &mut [f64]) {
    let (kh, kw, s) = (geom.kh, geom.kw, geom.stride);
    let ncol = f.oh * f.ow;
    for ci in 0..f.c {
        let plane = &img[ci * f.h * f.w..(ci + 1) * f.h * f.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let tap = ky * kw + kx;
                let (dy, dx) = (&offsets[2 * tap * ncol..], &offsets[(2 * tap + 1) * ncol..]);
                let row = ((ci * kh + ky) * kw + kx) * ncol;
                for oy in 0..f.oh {
                    for ox in 0..f.ow {
                        let col = oy * f.ow + ox;
                        let py = (oy * s + ky) as f64 - geom.pad.top as f64 + dy[col];
                        let px = (ox * s + kx) as f64 - geom.pad.left as f64 + dx[col];
                        cols[row + col] = bilinear(plane, f.h, f.w, py, px);
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Deformable 2-D convolution. `offsets` has shape `[N, 2·kh·kw, H', W']`
    /// with channel `2·tap` holding Δy and `2·tap + 1` holding Δx for kernel
    /// tap `tap = ky·kw + kx`.
    pub fn deform_conv2d(
        &mut self,
        input: Var,
        weight: Var,
        offsets: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let op = "deform_conv2d";
        let (x, wt, off) = (self.value(input), self.value(weight), self.value(offsets));
        let (n, co, geom, f) = conv_setup(op, x, wt, stride, padding)?;
        let taps = geom.kh * geom.kw;
        let expected = [n, 2 * taps, f.oh, f.ow];
        if off.shape() != expected {
            return shape_err(
                op,
                format!("offsets must be {expected:?} (2 per kernel tap), got {:?}", off.shape()),
            );
        }
        let ck = f.c * taps;
        let (ncol, in_len) = (f.oh * f.ow, f.c * f.h * f.w);
        let off_len = 2 * taps * ncol;
        let mut out = Tensor::zeros(vec![n, co, f.oh, f.ow]);
        let mut cols = vec![0.0; ck * ncol];
        for s in 0..n {
            sample_columns(
                &x.data()[s * in_len..(s + 1) * in_len],
                &off.data()[s * off_len..(s + 1) * off_len],
                f,
                &geom,
                &mut cols,
            );
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
            Op::DeformConv2d {
                input,
                weight,
                offsets,
                geom,
            },
            &[input, weight, offsets],
        ))
    }
}

pub(crate) fn deform_conv2d_backward(
    g: &Graph,
    input: Var,
    weight: Var,
    offsets: Var,
    geom: &ConvGeom,
    grad_out: &Tensor,
) -> Vec<(Var, Tensor)> {
    let (x, wt, off) = (g.value(input), g.value(weight), g.value(offsets));
    let (n, c, h, w) = check_nchw("deform_conv2d", x).unwrap();
    let co = wt.shape()[0];
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
    let f = Frame { c, h, w, oh, ow };
    let (kh, kw, stride) = (geom.kh, geom.kw, geom.stride);
    let taps = kh * kw;
    let ck = c * taps;
    let (ncol, in_len, off_len) = (oh * ow, c * h * w, 2 * taps * oh * ow);

    let (need_x, need_w, need_off) = (
        g.requires_grad(input),
        g.requires_grad(weight),
        g.requires_grad(offsets),
    );
    let mut dx = need_x.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut dw = need_w.then(|| Tensor::zeros(wt.shape().to_vec()));
    let mut doff = need_off.then(|| Tensor::zeros(off.shape().to_vec()));
    let mut cols = vec![0.0; ck * ncol];

    for s in 0..n {
        let img = &x.data()[s * in_len..(s + 1) * in_len];
        let offs = &off.data()[s * off_len..(s + 1) * off_len];
        let go = &grad_out.data()[s * co * ncol..(s + 1) * co * ncol];
        if let Some(dw) = dw.as_mut() {
            sample_columns(img, offs, f, geom, &mut cols);
            gemm(co, ncol, ck, go, false, &cols, true, dw.data_mut(), true);
        }
        if !(need_x || need_off) {
            continue;
        }
        gemm(ck, co, ncol, wt.data(), true, go, false, &mut cols, false);
        for ci in 0..c {
            let plane = &img[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let tap = ky * kw + kx;
                    let row = ((ci * kh + ky) * kw + kx) * ncol;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let col = oy * ow + ox;
                            let gcol = cols[row + col];
                            if gcol == 0.0 {
                                continue;
                            }
                            let py = (oy * stride + ky) as f64 - geom.pad.top as f64
                                + offs[2 * tap * ncol + col];
                            let px = (ox * stride + kx) as f64 - geom.pad.left as f64
                                + offs[(2 * tap + 1) * ncol + col];
                            let cr = Corners::at(py, px);
                            if let Some(dx) = dx.as_mut() {
                                let dplane = &mut dx.data_mut()[s * in_len + ci * h * w..s * in_len + (ci + 1) * h * w];
                                let pts = [
                                    (cr.y0, cr.x0),
                                    (cr.y0, cr.x0 + 1),
                                    (cr.y0 + 1, cr.x0),
                                    (cr.y0 + 1, cr.x0 + 1),
                                ];
                                for ((y, xx), wgt) in pts.into_iter().zip(cr.weights()) {
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                        dplane[y as usize * w + xx as usize] += gcol * wgt;
                                    }
                                }
                            }
                            if let Some(doff) = doff.as_mut() {
                                let [v00, v01, v10, v11] = cr.values(plane, h, w);
                                let (ly, lx) = (cr.ly, cr.lx);
                                let d_py = (1.0 - lx) * (v10 - v00) + lx * (v11 - v01);
                                let d_px = (1.0 - ly) * (v01 - v00) + ly * (v11 - v10);
                                let od = doff.data_mut();
                                od[s * off_len + 2 * tap * ncol + col] += gcol * d_py;
                                od[s * off_len + (2 * tap + 1) * ncol + col] += gcol * d_px;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    if let Some(dx) = dx {
        out.push((input, dx));
    }
    if let Some(dw) = dw {
        out.push((weight, dw));
    }
    if let Some(doff) = doff {
        out.push((offsets, doff));
    }
    out
}
