//! Parameterized building blocks shared by the models.

use rand_chacha::ChaCha8Rng;
use spikefuse_tensor::{Graph, Padding, Var};

use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};

pub const NORM_EPS: f64 = 1e-5;

/// Weight initialization scheme; `fan_in` is inferred from the shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(±1/√fan_in)`.
    Default,
    /// `U(±√(6/fan_in))`.
    He,
    /// Uniform with standard deviation `s/√fan_in`.
    Std(f64),
    Zero,
}

impl Init {
    fn create(self, store: &mut ParamStore, name: String, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> ParamId {
        match self {
            Init::Default => store.uniform(name, shape, 1.0 / (fan_in as f64).sqrt(), rng),
            Init::He => store.uniform(name, shape, (6.0 / fan_in as f64).sqrt(), rng),
            Init::Std(s) => store.uniform(name, shape, s * (3.0 / fan_in as f64).sqrt(), rng),
            Init::Zero => store.zeros(name, shape),
        }
    }
}

/// `y = x·W + b` on row-major `[L, in]` inputs; `W` is stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, init: Init, rng: &mut ChaCha8Rng) -> Self {
        let weight = init.create(store, format!("{name}.weight"), vec![in_dim, out_dim], in_dim, rng);
        let bias = bias.then(|| {
            let b = if init == Init::Zero { Init::Zero } else { Init::Default };
            b.create(store, format!("{name}.bias"), vec![out_dim], in_dim, rng)
        });
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.weight))?;
        Ok(match self.bias {
            Some(b) => g.add_bias(y, p.var(b), 1)?,
            None => y,
        })
    }
}

/// Square-kernel 2-D convolution over `[N, C, H, W]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let weight = init.create(store, format!("{name}.weight"), vec![c_out, c_in, kernel, kernel], fan_in, rng);
        let bias = bias.then(|| {
            let b = if init == Init::Zero { Init::Zero } else { Init::Default };
            b.create(store, format!("{name}.bias"), vec![c_out], fan_in, rng)
        });
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.conv2d(x, p.var(self.weight), self.stride, Padding::uniform(self.pad))?;
        self.add_bias(g, p, y)
    }

    pub(crate) fn add_bias(&self, g: &mut Graph, p: &Bound, y: Var) -> Result<Var> {
        Ok(match self.bias {
            Some(b) => g.add_bias(y, p.var(b), 1)?,
            None => y,
        })
    }
}

/// Group normalization with per-channel affine parameters (gain 1, bias 0).
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        Self {
            gain: store.full(format!("{name}.gain"), vec![channels], 1.0),
            bias: store.zeros(format!("{name}.bias"), vec![channels]),
            groups,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.group_norm(x, self.groups, p.var(self.gain), p.var(self.bias), NORM_EPS)?)
    }

    /// Normalizes each feature column of a token matrix `[L, D]` over the
    /// tokens (batch-norm statistics of a single sample).
    pub fn forward_tokens(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (l, d) = (g.shape(x)[0], g.shape(x)[1]);
        let t = g.transpose(x)?;
        let t = g.reshape(t, vec![1, d, l])?;
        let y = g.group_norm(t, self.groups, p.var(self.gain), p.var(self.bias), NORM_EPS)?;
        let y = g.reshape(y, vec![d, l])?;
        Ok(g.transpose(y)?)
    }

    /// Normalizes each row of `[L, D]` over its features (layer norm).
    pub fn forward_rows(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (l, d) = (g.shape(x)[0], g.shape(x)[1]);
        let t = g.reshape(x, vec![l, d, 1])?;
        let y = g.group_norm(t, 1, p.var(self.gain), p.var(self.bias), NORM_EPS)?;
        Ok(g.reshape(y, vec![l, d])?)
    }
}
