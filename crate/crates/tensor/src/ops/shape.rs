use crate::error::{invalid, shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

impl Graph {
    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input }, &[input]))
    }

    /// Row-major flattening to `[numel]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).numel();
        self.reshape(input, vec![n])
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return invalid("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return invalid("concat", format!("axis {axis} for rank {}", base.len()));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agrees = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !agrees {
                return shape_err("concat", format!("{s:?} does not match {base:?} off axis {axis}"));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::from_vec(shape, data);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return invalid(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            );
        }
        let (outer, extent, inner) = axis_layout(&shape, axis);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * extent * inner + start * inner;
            data.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::from_vec(out_shape, data);
        Ok(self.push(value, Op::Narrow { input, axis, start }, &[input]))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, Op::SumAll { input }, &[input])
    }

    /// Mean over `axis`, removing it (a rank-1 input yields `[1]`).
    pub fn mean_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return invalid("mean_axis", format!("axis {axis} for rank {}", shape.len()));
        }
        let (outer, extent, inner) = axis_layout(&shape, axis);
        let src = self.value(input).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..extent {
                let row = &src[(o * extent + j) * inner..(o * extent + j + 1) * inner];
                for (d, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        for d in &mut data {
            *d /= extent as f64;
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::from_vec(out_shape, data);
        Ok(self.push(value, Op::MeanAxis { input, axis }, &[input]))
    }
}

pub(crate) fn concat_backward(g: &Graph, inputs: &[Var], axis: usize, grad_out: &Tensor) -> Vec<(Var, Tensor)> {
    let total = grad_out.shape()[axis];
    let outer: usize = grad_out.shape()[..axis].iter().product();
    let inner: usize = grad_out.shape()[axis + 1..].iter().product();
    let mut offset = 0;
    let mut out = Vec::with_capacity(inputs.len());
    for &v in inputs {
        let extent = g.shape(v)[axis];
        if g.requires_grad(v) {
            let mut data = Vec::with_capacity(outer * extent * inner);
            for o in 0..outer {
                let from = (o * total + offset) * inner;
                data.extend_from_slice(&grad_out.data()[from..from + extent * inner]);
            }
            out.push((v, Tensor::from_vec(g.shape(v).to_vec(), data)));
        }
        offset += extent;
    }
    out
}

pub(crate) fn narrow_backward(g: &Graph, input: Var, axis: usize, start: usize, grad_out: &Tensor) -> Vec<(Var, Tensor)> {
    let shape = g.shape(input);
    let (outer, extent, inner) = axis_layout(shape, axis);
    let len = grad_out.shape()[axis];
    let mut dx = Tensor::zeros(shape.to_vec());
    for o in 0..outer {
        let to = o * extent * inner + start * inner;
        dx.data_mut()[to..to + len * inner]
            .copy_from_slice(&grad_out.data()[o * len * inner..(o + 1) * len * inner]);
    }
    vec![(input, dx)]
}

pub(crate) fn mean_axis_backward(g: &Graph, input: Var, axis: usize, grad_out: &Tensor) -> Vec<(Var, Tensor)> {
    let shape = g.shape(input);
    let (outer, extent, inner) = axis_layout(shape, axis);
    let mut dx = Tensor::zeros(shape.to_vec());
    let scale = 1.0 / extent as f64;
    let go = grad_out.data();
    for o in 0..outer {
        for j in 0..extent {
            let row = &mut dx.data_mut()[(o * extent + j) * inner..(o * extent + j + 1) * inner];
            for (d, v) in row.iter_mut().zip(&go[o * inner..(o + 1) * inner]) {
                *d = v * scale;
            }
        }
    }
    vec![(input, dx)]
}
