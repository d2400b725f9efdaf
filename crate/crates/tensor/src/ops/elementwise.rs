use crate::error::{invalid, shape_err, Result};
use crate::graph::{BinaryKind, Graph, Op, UnaryKind, Var};
use crate::tensor::Tensor;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    fn unary(&mut self, input: Var, kind: UnaryKind) -> Var {
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            UnaryKind::Relu => Box::new(|v: f64| v.max(0.0)),
            UnaryKind::Sigmoid => Box::new(sigmoid),
            UnaryKind::Tanh => Box::new(f64::tanh),
            UnaryKind::Scale(c) => Box::new(move |v| v * c),
            UnaryKind::AddScalar(c) => Box::new(move |v| v + c),
        };
        let value = self.value(input).map(f);
        self.push(value, Op::Unary { input, kind }, &[input])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Tanh)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, UnaryKind::Scale(c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, UnaryKind::AddScalar(c))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    fn binary(&mut self, lhs: Var, rhs: Var, kind: BinaryKind) -> Result<Var> {
        let f = match kind {
            BinaryKind::Add => |a: f64, b: f64| a + b,
            BinaryKind::Sub => |a: f64, b: f64| a - b,
            BinaryKind::Mul => |a: f64, b: f64| a * b,
        };
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return shape_err(
                "elementwise",
                format!("{kind:?} needs equal shapes, got {:?} and {:?}", a.shape(), b.shape()),
            );
        }
        let value = a.zip_map(b, f)?;
        Ok(self.push(value, Op::Binary { lhs, rhs, kind }, &[lhs, rhs]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    /// Adds a vector along `axis`, broadcasting over every other axis.
    pub fn add_bias(&mut self, input: Var, bias: Var, axis: usize) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias);
        if axis >= x.ndim() {
            return invalid("add_bias", format!("axis {axis} for rank {}", x.ndim()));
        }
        if b.numel() != x.shape()[axis] {
            return shape_err(
                "add_bias",
                format!("bias of {} values for extent {} on axis {axis}", b.numel(), x.shape()[axis]),
            );
        }
        let (extent, inner) = (x.shape()[axis], x.shape()[axis + 1..].iter().product::<usize>());
        let mut value = x.clone();
        let bd = b.data();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bd[(i / inner) % extent];
        }
        Ok(self.push(value, Op::AddBias { input, bias, axis }, &[input, bias]))
    }
}

pub(crate) fn unary_backward(
    g: &Graph,
    input: Var,
    kind: UnaryKind,
    out: &Tensor,
    grad_out: &Tensor,
) -> Vec<(Var, Tensor)> {
    let grad = match kind {
        UnaryKind::Relu => {
            let x = g.value(input);
            grad_out
                .zip_map(x, |go, xv| if xv > 0.0 { go } else { 0.0 })
                .expect("relu shapes")
        }
        UnaryKind::Sigmoid => grad_out
            .zip_map(out, |go, y| go * y * (1.0 - y))
            .expect("sigmoid shapes"),
        UnaryKind::Tanh => grad_out
            .zip_map(out, |go, y| go * (1.0 - y * y))
            .expect("tanh shapes"),
        UnaryKind::Scale(c) => grad_out.map(|go| go * c),
        UnaryKind::AddScalar(_) => grad_out.clone(),
    };
    vec![(input, grad)]
}

pub(crate) fn binary_backward(
    g: &Graph,
    lhs: Var,
    rhs: Var,
    kind: BinaryKind,
    grad_out: &Tensor,
) -> Vec<(Var, Tensor)> {
    match kind {
        BinaryKind::Add => vec![(lhs, grad_out.clone()), (rhs, grad_out.clone())],
        BinaryKind::Sub => vec![(lhs, grad_out.clone()), (rhs, grad_out.map(|v| -v))],
        BinaryKind::Mul => {
            let mut out = Vec::with_capacity(2);
            if g.requires_grad(lhs) {
                out.push((lhs, grad_out.zip_map(g.value(rhs), |a, b| a * b).unwrap()));
            }
            if g.requires_grad(rhs) {
                out.push((rhs, grad_out.zip_map(g.value(lhs), |a, b| a * b).unwrap()));
            }
            out
        }
    }
}

pub(crate) fn add_bias_backward(
    g: &Graph,
    input: Var,
    bias: Var,
    axis: usize,
    grad_out: &Tensor,
) -> Vec<(Var, Tensor)> {
    let shape = g.shape(input);
    let (extent, inner) = (shape[axis], shape[axis + 1..].iter().product::<usize>());
    let mut db = Tensor::zeros(g.shape(bias).to_vec());
    {
        let dbd = db.data_mut();
        for (i, go) in grad_out.data().iter().enumerate() {
            dbd[(i / inner) % extent] += go;
        }
    }
    vec![(input, grad_out.clone()), (bias, db)]
}
