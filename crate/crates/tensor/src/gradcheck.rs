//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Upper bound on checked coordinates per input; evenly spaced when the
    /// input is larger.
    pub max_coords: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradEntry {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(1, |numeric|)`.
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradEntry> {
        self.entries.iter().filter(|e| !(e.rel_err < self.tolerance))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compares the backward pass of `f` against central differences. `f` builds
/// a scalar loss from one leaf per entry of `inputs`; every input is treated
/// as requiring gradients.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&g, v)).collect();

    let mut values = inputs.to_vec();
    let mut entries = Vec::new();
    for (which, grad) in analytic.iter().enumerate() {
        let numel = values[which].numel();
        let count = numel.min(opts.max_coords.max(1));
        for k in 0..count {
            let index = k * numel / count;
            let original = values[which].data()[index];
            values[which].data_mut()[index] = original + opts.step;
            let plus = eval(&values)?;
            values[which].data_mut()[index] = original - opts.step;
            let minus = eval(&values)?;
            values[which].data_mut()[index] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.data()[index];
            entries.push(GradEntry {
                input: which,
                index,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }
    let max_rel_err = entries
        .iter()
        .map(|e| e.rel_err)
        .fold(0.0, |m: f64, e| if e.is_nan() { f64::INFINITY } else { m.max(e) });
    Ok(GradReport {
        entries,
        max_rel_err,
        tolerance: opts.tolerance,
    })
}

/// Deterministic pseudo-random values in `[-1, 1)` (splitmix64).
pub fn probe_values(len: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    (0..len)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Reduces a tensor-valued output to a scalar `Σ out ⊙ R` for a fixed
/// pseudo-random `R`, so one backward pass checks a full vector-Jacobian
/// product.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let n = shape.iter().product();
    let r = g.constant(Tensor::from_vec(shape, probe_values(n, seed)));
    let prod = g.mul(out, r)?;
    Ok(g.sum(prod))
}
