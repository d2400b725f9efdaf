use rand_chacha::ChaCha8Rng;
use spikefuse_tensor::{Graph, Var};

use crate::error::Result;
use crate::nn::{GroupNorm, Init, Linear};
use crate::params::{Bound, ParamStore};

/// Pre-norm single-head transformer block without biases in the linear
/// layers: `x + attn(LN(x))`, then `x + W₂·relu(W₁·LN(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    ln1: GroupNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: GroupNorm,
    fc1: Linear,
    fc2: Linear,
    dim: usize,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, mlp_ratio: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut lin = |store: &mut ParamStore, n: &str, i, o| Linear::new(store, &format!("{prefix}.{n}"), i, o, false, Init::Default, rng);
        let q = lin(store, "q", dim, dim);
        let k = lin(store, "k", dim, dim);
        let v = lin(store, "v", dim, dim);
        let o = lin(store, "o", dim, dim);
        let fc1 = lin(store, "fc1", dim, dim * mlp_ratio);
        let fc2 = lin(store, "fc2", dim * mlp_ratio, dim);
        Self {
            ln1: GroupNorm::new(store, &format!("{prefix}.ln1"), dim, 1),
            q,
            k,
            v,
            o,
            ln2: GroupNorm::new(store, &format!("{prefix}.ln2"), dim, 1),
            fc1,
            fc2,
            dim,
        }
    }

    /// `[L, D] → [L, D]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.ln1.forward_rows(g, p, x)?;
        let q = self.q.forward(g, p, h)?;
        let k = self.k.forward(g, p, h)?;
        let v = self.v.forward(g, p, h)?;
        let kt = g.transpose(k)?;
        let logits = g.matmul(q, kt)?;
        let logits = g.scale(logits, 1.0 / (self.dim as f64).sqrt());
        let w = g.softmax(logits, 1)?;
        let a = g.matmul(w, v)?;
        let a = self.o.forward(g, p, a)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward_rows(g, p, x)?;
        let h = self.fc1.forward(g, p, h)?;
        let h = g.relu(h);
        let h = self.fc2.forward(g, p, h)?;
        Ok(g.add(x, h)?)
    }
}
