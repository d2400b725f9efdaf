use crate::error::{invalid, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// How the threshold crossing is evaluated in the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpikeForward {
    /// Binary step: 1 where `u >= threshold`.
    #[default]
    Heaviside,
    /// The integral of the rectangular surrogate: a linear ramp from 0 to 1
    /// over `|u - threshold| < half_width`. Its exact derivative equals the
    /// surrogate, which makes finite-difference checks of spiking layers
    /// possible.
    Ramp,
}

/// Rectangular surrogate derivative: `1/(2a)` inside `|x| < a`, else 0.
pub fn surrogate_window(x: f64, half_width: f64) -> f64 {
    if x.abs() < half_width {
        0.5 / half_width
    } else {
        0.0
    }
}

pub fn spike_value(u: f64, threshold: f64, half_width: f64, mode: SpikeForward) -> f64 {
    match mode {
        SpikeForward::Heaviside => {
            if u >= threshold {
                1.0
            } else {
                0.0
            }
        }
        SpikeForward::Ramp => ((u - threshold + half_width) / (2.0 * half_width)).clamp(0.0, 1.0),
    }
}

impl Graph {
    /// Threshold nonlinearity whose backward pass uses the rectangular
    /// surrogate window of half-width `half_width`.
    pub fn spike(&mut self, input: Var, threshold: f64, half_width: f64, mode: SpikeForward) -> Result<Var> {
        if half_width <= 0.0 || half_width.is_nan() {
            return invalid("spike", format!("surrogate half-width must be > 0, got {half_width}"));
        }
        let value = self
            .value(input)
            .map(|u| spike_value(u, threshold, half_width, mode));
        Ok(self.push(
            value,
            Op::Spike {
                input,
                threshold,
                half_width,
            },
            &[input],
        ))
    }
}

pub(crate) fn spike_backward(g: &Graph, input: Var, threshold: f64, half_width: f64, grad_out: &Tensor) -> Vec<(Var, Tensor)> {
    let grad = grad_out
        .zip_map(g.value(input), |go, u| go * surrogate_window(u - threshold, half_width))
        .expect("spike shapes");
    vec![(input, grad)]
}
