//! Discrete multistep spiking neurons.
//!
//! All three kinds share the soft-reset recurrence
//! `u[t] = λ·u[t-1] + I[t] − θ·s[t-1]`, `s[t] = [u[t] ≥ θ]`.
//! IF and LIF emit `s`; LIAF emits `relu(u)` while `s` still drives the reset.

use std::fmt;
use std::str::FromStr;

use spikefuse_tensor::{Graph, SpikeForward, Tensor, Var};

use crate::error::{config_err, Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 1.0;
pub const DEFAULT_LEAK: f64 = 0.5;
pub const DEFAULT_SURROGATE_WIDTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NeuronKind {
    If,
    Lif,
    Liaf,
}

impl FromStr for NeuronKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "if" => Ok(Self::If),
            "lif" => Ok(Self::Lif),
            "liaf" => Ok(Self::Liaf),
            other => config_err(format!("unknown neuron kind {other:?} (expected if, lif or liaf)")),
        }
    }
}

impl fmt::Display for NeuronKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::If => "if",
            Self::Lif => "lif",
            Self::Liaf => "liaf",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronConfig {
    pub kind: NeuronKind,
    pub threshold: f64,
    /// Decay `λ`; fixed at 1 for IF.
    pub leak: f64,
    /// Half-width `a` of the rectangular surrogate window.
    pub surrogate_width: f64,
    pub forward: SpikeForward,
}

impl NeuronConfig {
    pub fn new(kind: NeuronKind) -> Self {
        Self {
            kind,
            threshold: DEFAULT_THRESHOLD,
            leak: if kind == NeuronKind::If { 1.0 } else { DEFAULT_LEAK },
            surrogate_width: DEFAULT_SURROGATE_WIDTH,
            forward: SpikeForward::Heaviside,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return config_err(format!("threshold must be > 0, got {}", self.threshold));
        }
        if !(self.leak > 0.0 && self.leak <= 1.0) {
            return config_err(format!("leak must lie in (0, 1], got {}", self.leak));
        }
        if self.kind == NeuronKind::If && self.leak != 1.0 {
            return config_err(format!("IF neurons do not leak, got leak {}", self.leak));
        }
        if !(self.surrogate_width > 0.0) {
            return config_err(format!("surrogate half-width must be > 0, got {}", self.surrogate_width));
        }
        Ok(())
    }
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self::new(NeuronKind::Lif)
    }
}

/// Rectangular surrogate for `ds/du`, evaluated on `u − θ`.
pub fn surrogate_grad(u_minus_theta: &Tensor, half_width: f64) -> Tensor {
    assert!(half_width > 0.0, "surrogate half-width must be > 0");
    u_minus_theta.map(|x| spikefuse_tensor::surrogate_window(x, half_width))
}

/// Membrane potential and last spikes of one layer, bound to a graph.
#[derive(Clone, Debug, Default)]
pub struct NeuronState {
    potential: Option<Var>,
    spikes: Option<Var>,
}

impl NeuronState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Back to `u = 0`, `s = 0`.
    pub fn reset(&mut self) {
        self.potential = None;
        self.spikes = None;
    }

    pub fn potential(&self) -> Option<Var> {
        self.potential
    }

    pub fn spikes(&self) -> Option<Var> {
        self.spikes
    }

    /// Advances one time step and returns the layer output.
    pub fn step(&mut self, g: &mut Graph, input: Var, cfg: &NeuronConfig) -> Result<Var> {
        let mut u = input;
        if let Some(prev) = self.potential {
            let decayed = if cfg.leak == 1.0 { prev } else { g.scale(prev, cfg.leak) };
            u = g.add(decayed, u)?;
        }
        if let Some(s) = self.spikes {
            let reset = g.scale(s, cfg.threshold);
            u = g.sub(u, reset)?;
        }
        let s = g.spike(u, cfg.threshold, cfg.surrogate_width, cfg.forward)?;
        self.potential = Some(u);
        self.spikes = Some(s);
        Ok(match cfg.kind {
            NeuronKind::If | NeuronKind::Lif => s,
            NeuronKind::Liaf => g.relu(u),
        })
    }
}
