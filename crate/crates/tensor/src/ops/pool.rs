use crate::error::{invalid, Result};
use crate::graph::{Graph, Op, Var};
use crate::ops::conv::{check_nchw, conv_output_extent};
use crate::tensor::Tensor;

/// `[start, end)` of adaptive pooling cell `i` out of `out` over `len` inputs.
fn adaptive_range(i: usize, len: usize, out: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

impl Graph {
    /// Max pooling with floor semantics. Ties resolve to the first element
    /// in row-major scan order of the window.
    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = check_nchw("max_pool2d", x)?;
        let oh = conv_output_extent(h, kernel, stride, 0, 0);
        let ow = conv_output_extent(w, kernel, stride, 0, 0);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return invalid(
                "max_pool2d",
                format!("window {kernel} (stride {stride}) does not fit a {h}×{w} input"),
            );
        };
        let mut out = Tensor::zeros(vec![n, c, oh, ow]);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let src = x.data();
        for (p, o) in out.data_mut().chunks_mut(oh * ow).enumerate() {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let i = base + (oy * stride + ky) * w + ox * stride + kx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    o[oy * ow + ox] = src[best];
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(out, Op::MaxPool2d { input, argmax }, &[input]))
    }

    /// Average pooling onto a fixed `out_h × out_w` grid.
    pub fn adaptive_avg_pool2d(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = check_nchw("adaptive_avg_pool2d", x)?;
        if out_h == 0 || out_w == 0 {
            return invalid("adaptive_avg_pool2d", "output extents must be >= 1");
        }
        let mut out = Tensor::zeros(vec![n, c, out_h, out_w]);
        let src = x.data();
        for (p, o) in out.data_mut().chunks_mut(out_h * out_w).enumerate() {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for oy in 0..out_h {
                let (y0, y1) = adaptive_range(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = adaptive_range(ox, w, out_w);
                    let mut total = 0.0;
                    for y in y0..y1 {
                        total += plane[y * w + x0..y * w + x1].iter().sum::<f64>();
                    }
                    o[oy * out_w + ox] = total / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        Ok(self.push(out, Op::AdaptiveAvgPool2d { input }, &[input]))
    }
}

pub(crate) fn max_pool2d_backward(g: &Graph, input: Var, argmax: &[usize], grad_out: &Tensor) -> Vec<(Var, Tensor)> {
    let mut dx = Tensor::zeros(g.shape(input).to_vec());
    let d = dx.data_mut();
    for (&i, go) in argmax.iter().zip(grad_out.data()) {
        d[i] += go;
    }
    vec![(input, dx)]
}

pub(crate) fn adaptive_avg_pool2d_backward(g: &Graph, input: Var, grad_out: &Tensor) -> Vec<(Var, Tensor)> {
    let shape = g.shape(input);
    let (h, w) = (shape[2], shape[3]);
    let (out_h, out_w) = (grad_out.shape()[2], grad_out.shape()[3]);
    let mut dx = Tensor::zeros(shape.to_vec());
    for (p, go) in grad_out.data().chunks(out_h * out_w).enumerate() {
        let plane = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1) = adaptive_range(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = adaptive_range(ox, w, out_w);
                let share = go[oy * out_w + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for v in &mut plane[y * w + x0..y * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    vec![(input, dx)]
}
