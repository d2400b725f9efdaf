use crate::error::{invalid, shape_err, Result};
use crate::gemm::gemm;
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Broadcast plan for a batched product `[..., m, k] · [..., k, n]`.
struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    batch_shape: Vec<usize>,
    /// For every output batch, the batch index into lhs and rhs.
    pairs: Vec<(usize, usize)>,
}

fn plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return invalid("matmul", format!("operands need rank >= 2, got {a:?} and {b:?}"));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return shape_err("matmul", format!("inner extents differ: {a:?} · {b:?}"));
    }
    let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let rank = ab.len().max(bb.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (ap, bp) = (pad(ab), pad(bb));
    let mut batch_shape = Vec::with_capacity(rank);
    for (&x, &y) in ap.iter().zip(&bp) {
        if x != y && x != 1 && y != 1 {
            return shape_err("matmul", format!("batch extents not broadcastable: {a:?} · {b:?}"));
        }
        batch_shape.push(x.max(y));
    }
    let total: usize = batch_shape.iter().product();
    let mut pairs = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        let (mut ia, mut ib) = (0, 0);
        for d in 0..rank {
            ia = ia * ap[d] + if ap[d] == 1 { 0 } else { idx[d] };
            ib = ib * bp[d] + if bp[d] == 1 { 0 } else { idx[d] };
        }
        pairs.push((ia, ib));
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < batch_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(MatmulPlan {
        m,
        k,
        n,
        batch_shape,
        pairs,
    })
}

impl Graph {
    /// Batched matrix product with numpy-style broadcasting of leading axes.
    pub fn matmul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        let p = plan(a.shape(), b.shape())?;
        let mut shape = p.batch_shape.clone();
        shape.extend([p.m, p.n]);
        let mut out = Tensor::zeros(shape);
        let (mk, kn, mn) = (p.m * p.k, p.k * p.n, p.m * p.n);
        for (bi, &(ia, ib)) in p.pairs.iter().enumerate() {
            gemm(
                p.m,
                p.k,
                p.n,
                &a.data()[ia * mk..(ia + 1) * mk],
                false,
                &b.data()[ib * kn..(ib + 1) * kn],
                false,
                &mut out.data_mut()[bi * mn..(bi + 1) * mn],
                false,
            );
        }
        Ok(self.push(out, Op::Matmul { lhs, rhs }, &[lhs, rhs]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        if self.value(input).ndim() < 2 {
            return invalid("transpose", "rank must be >= 2");
        }
        let value = transpose_last2_tensor(self.value(input));
        Ok(self.push(value, Op::TransposeLast2 { input }, &[input]))
    }

    /// Softmax along `axis`, max-shifted for stability.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let x = self.value(input);
        if axis >= x.ndim() {
            return invalid("softmax", format!("axis {axis} for rank {}", x.ndim()));
        }
        let value = softmax_tensor(x, axis);
        Ok(self.push(value, Op::Softmax { input, axis }, &[input]))
    }
}

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_tensor(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_layout(x.shape(), axis);
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).fold(f64::NEG_INFINITY, |m, j| m.max(d[at(j)]));
            let mut total = 0.0;
            for j in 0..len {
                let e = (d[at(j)] - max).exp();
                d[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                d[at(j)] /= total;
            }
        }
    }
    out
}

pub(crate) fn transpose_last2_tensor(x: &Tensor) -> Tensor {
    let shape = x.shape();
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let batch = x.numel() / (rows * cols);
    let mut out_shape = shape.to_vec();
    out_shape.swap(r - 2, r - 1);
    let mut out = vec![0.0; x.numel()];
    let src = x.data();
    for b in 0..batch {
        let base = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[base + j * rows + i] = src[base + i * cols + j];
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub(crate) fn matmul_backward(g: &Graph, lhs: Var, rhs: Var, grad_out: &Tensor) -> Vec<(Var, Tensor)> {
    let (a, b) = (g.value(lhs), g.value(rhs));
    let p = plan(a.shape(), b.shape()).expect("matmul plan validated in forward");
    let (mk, kn, mn) = (p.m * p.k, p.k * p.n, p.m * p.n);
    let mut result = Vec::with_capacity(2);
    if g.requires_grad(lhs) {
        let mut da = Tensor::zeros(a.shape().to_vec());
        for (bi, &(ia, ib)) in p.pairs.iter().enumerate() {
            // da = g · bᵀ
            gemm(
                p.m,
                p.n,
                p.k,
                &grad_out.data()[bi * mn..(bi + 1) * mn],
                false,
                &b.data()[ib * kn..(ib + 1) * kn],
                true,
                &mut da.data_mut()[ia * mk..(ia + 1) * mk],
                true,
            );
        }
        result.push((lhs, da));
    }
    if g.requires_grad(rhs) {
        let mut db = Tensor::zeros(b.shape().to_vec());
        for (bi, &(ia, ib)) in p.pairs.iter().enumerate() {
            // db = aᵀ · g
            gemm(
                p.k,
                p.m,
                p.n,
                &a.data()[ia * mk..(ia + 1) * mk],
                true,
                &grad_out.data()[bi * mn..(bi + 1) * mn],
                false,
                &mut db.data_mut()[ib * kn..(ib + 1) * kn],
                true,
            );
        }
        result.push((rhs, db));
    }
    result
}

pub(crate) fn softmax_backward(input: Var, axis: usize, out: &Tensor, grad_out: &Tensor) -> Vec<(Var, Tensor)> {
    let (outer, len, inner) = axis_layout(out.shape(), axis);
    let mut dx = Tensor::zeros(out.shape().to_vec());
    let (y, gy) = (out.data(), grad_out.data());
    let d = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let dot: f64 = (0..len).map(|j| y[at(j)] * gy[at(j)]).sum();
            for j in 0..len {
                d[at(j)] = y[at(j)] * (gy[at(j)] - dot);
            }
        }
    }
    vec![(input, dx)]
}
