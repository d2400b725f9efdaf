use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl Graph {
    /// Binary cross-entropy `-[y ln p + (1-y) ln(1-p)]` averaged over all
    /// elements. Returns a `[1]` tensor.
    pub fn bce(&mut self, probs: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(probs);
        if p.shape() != target.shape() {
            return shape_err("bce", format!("scores {:?} vs target {:?}", p.shape(), target.shape()));
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| {
                let p = clamp(p);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let value = Tensor::scalar(total / p.numel() as f64);
        Ok(self.push(
            value,
            Op::Bce {
                input: probs,
                target: target.clone(),
            },
            &[probs],
        ))
    }
}

pub(crate) fn bce_backward(g: &Graph, input: Var, target: &Tensor, grad_out: &Tensor) -> Vec<(Var, Tensor)> {
    let p = g.value(input);
    let scale = grad_out.data()[0] / p.numel() as f64;
    let grad = p
        .zip_map(target, |p, y| {
            if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                0.0
            } else {
                scale * ((1.0 - y) / (1.0 - p) - y / p)
            }
        })
        .expect("bce shapes");
    vec![(input, grad)]
}
