//! Append-only operation tape and the reverse sweep over it.
//!
//! Every operation appends one node holding its forward value. Because inputs
//! always precede outputs, append order is a topological order and the
//! backward pass is a single reverse scan.

use crate::error::{Result, TensorError};
use crate::ops::conv::ConvGeom;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
    Scale(f64),
    AddScalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Unary {
        input: Var,
        kind: UnaryKind,
    },
    Binary {
        lhs: Var,
        rhs: Var,
        kind: BinaryKind,
    },
    AddBias {
        input: Var,
        bias: Var,
        axis: usize,
    },
    Matmul {
        lhs: Var,
        rhs: Var,
    },
    TransposeLast2 {
        input: Var,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    Conv2d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
    },
    DeformConv2d {
        input: Var,
        weight: Var,
        offsets: Var,
        geom: ConvGeom,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    AdaptiveAvgPool2d {
        input: Var,
    },
    GroupNorm {
        input: Var,
        gain: Var,
        bias: Var,
        groups: usize,
        stats: Vec<(f64, f64)>,
    },
    Reshape {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    SumAll {
        input: Var,
    },
    MeanAxis {
        input: Var,
        axis: usize,
    },
    Spike {
        input: Var,
        threshold: f64,
        half_width: f64,
    },
    Bce {
        input: Var,
        target: Tensor,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Reverse-mode differentiation tape. One graph per forward pass.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that gradients are reported for.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Input that is held fixed.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(loss_value.shape().to_vec()));
        }
        for idx in (0..=loss.0).rev() {
            let Some(grad_out) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(grad_out);
                continue;
            }
            let contributions = self.node_backward(idx, &grad_out);
            for (var, g) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.shape(var), "gradient shape for node {}", var.0);
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, idx: usize, grad_out: &Tensor) -> Vec<(Var, Tensor)> {
        use crate::ops::*;
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Unary { input, kind } => {
                elementwise::unary_backward(self, *input, *kind, out, grad_out)
            }
            Op::Binary { lhs, rhs, kind } => {
                elementwise::binary_backward(self, *lhs, *rhs, *kind, grad_out)
            }
            Op::AddBias { input, bias, axis } => {
                elementwise::add_bias_backward(self, *input, *bias, *axis, grad_out)
            }
            Op::Matmul { lhs, rhs } => linalg::matmul_backward(self, *lhs, *rhs, grad_out),
            Op::TransposeLast2 { input } => {
                vec![(*input, linalg::transpose_last2_tensor(grad_out))]
            }
            Op::Softmax { input, axis } => {
                linalg::softmax_backward(*input, *axis, out, grad_out)
            }
            Op::Conv2d {
                input,
                weight,
                geom,
            } => conv::conv2d_backward(self, *input, *weight, geom, grad_out),
            Op::ConvTranspose2d {
                input,
                weight,
                geom,
            } => conv::conv_transpose2d_backward(self, *input, *weight, geom, grad_out),
            Op::DeformConv2d {
                input,
                weight,
                offsets,
                geom,
            } => deform::deform_conv2d_backward(self, *input, *weight, *offsets, geom, grad_out),
            Op::MaxPool2d { input, argmax } => {
                pool::max_pool2d_backward(self, *input, argmax, grad_out)
            }
            Op::AdaptiveAvgPool2d { input } => {
                pool::adaptive_avg_pool2d_backward(self, *input, grad_out)
            }
            Op::GroupNorm {
                input,
                gain,
                bias,
                groups,
                stats,
            } => norm::group_norm_backward(self, *input, *gain, *bias, *groups, stats, grad_out),
            Op::Reshape { input } => {
                vec![(*input, grad_out.clone().with_shape(self.shape(*input).to_vec()))]
            }
            Op::Concat { inputs, axis } => shape::concat_backward(self, inputs, *axis, grad_out),
            Op::Narrow { input, axis, start } => {
                shape::narrow_backward(self, *input, *axis, *start, grad_out)
            }
            Op::SumAll { input } => {
                let g = grad_out.data()[0];
                vec![(*input, Tensor::full(self.shape(*input).to_vec(), g))]
            }
            Op::MeanAxis { input, axis } => shape::mean_axis_backward(self, *input, *axis, grad_out),
            Op::Spike {
                input,
                threshold,
                half_width,
            } => spike::spike_backward(self, *input, *threshold, *half_width, grad_out),
            Op::Bce { input, target } => loss::bce_backward(self, *input, target, grad_out),
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when unreachable from the loss.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v).to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
