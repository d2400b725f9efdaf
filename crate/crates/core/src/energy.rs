//! Operation counting and the MAC/AC energy model.
//!
//! An ANN layer costs `k_w·k_h·c_in·h_out·w_out·c_out` multiply-accumulates
//! per step. A spiking layer only does the accumulates its input spikes
//! trigger, so its count is scaled by the spike rate.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};

/// Spikes reported for the full-size model.
pub const PAPER_SPIKE_COUNT: u64 = 21_971_781;
/// The rounded spike rate used in the published energy estimate.
pub const PAPER_SPIKE_RATE: f64 = 0.0001137;
/// Simulation steps of the full-size model.
pub const PAPER_STEPS: u64 = 16;
/// Input channels implied by the published operation total.
pub const PAPER_INPUT_CHANNELS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(Self::Conv),
            "deconv" => Ok(Self::Deconv),
            other => config_err(format!("unknown layer kind {other:?} (expected conv or deconv)")),
        }
    }
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Conv => "conv",
            Self::Deconv => "deconv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kw: usize,
    pub kh: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub spiking: bool,
}

impl LayerSpec {
    pub fn square(kind: LayerKind, k: usize, c_in: usize, c_out: usize, extent: usize, spiking: bool) -> Self {
        Self {
            kind,
            kw: k,
            kh: k,
            c_in,
            c_out,
            h_out: extent,
            w_out: extent,
            spiking,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.kw, self.kh, self.c_in, self.c_out, self.h_out, self.w_out].contains(&0) {
            return config_err(format!("layer spec has a zero extent: {self:?}"));
        }
        Ok(())
    }
}

/// Multiply-accumulate count of one forward step.
pub fn op_count_ann(layer: &LayerSpec) -> u128 {
    [layer.kw, layer.kh, layer.c_in, layer.h_out, layer.w_out, layer.c_out]
        .iter()
        .map(|&v| v as u128)
        .product()
}

pub fn op_count_snn(layer: &LayerSpec, spike_rate: f64) -> Result<f64> {
    if !(spike_rate >= 0.0) {
        return config_err(format!("spike rate must be >= 0, got {spike_rate}"));
    }
    Ok(spike_rate * op_count_ann(layer) as f64)
}

/// Energy per operation in picojoules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyConstants {
    pub e_mac: f64,
    pub e_ac: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self { e_mac: 4.6, e_ac: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerEnergy {
    pub spec: LayerSpec,
    pub op_ann: u128,
    /// Over all steps for spiking layers, one pass otherwise.
    pub op_snn: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub layers: Vec<LayerEnergy>,
    pub steps: u64,
    pub spike_rate: f64,
    /// Per-step MACs of the spiking layers.
    pub spiking_ops: u128,
    pub nonspiking_ops: u128,
    pub ecp_ann: f64,
    pub ecp_snn: f64,
    pub constants: EnergyConstants,
}

impl EnergyReport {
    /// ECP_ANN / ECP_SNN.
    pub fn improvement_ratio(&self) -> f64 {
        self.ecp_ann / self.ecp_snn
    }

    pub fn render_table(&self) -> String {
        let header = ["#", "kind", "k", "c_in", "c_out", "h_out", "w_out", "spiking", "op_ann", "op_snn"];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for (i, l) in self.layers.iter().enumerate() {
            let s = &l.spec;
            let k = if s.kw == s.kh { s.kw.to_string() } else { format!("{}x{}", s.kh, s.kw) };
            rows.push(vec![
                (i + 1).to_string(),
                s.kind.as_str().into(),
                k,
                s.c_in.to_string(),
                s.c_out.to_string(),
                s.h_out.to_string(),
                s.w_out.to_string(),
                if s.spiking { "yes" } else { "no" }.into(),
                l.op_ann.to_string(),
                format!("{:.1}", l.op_snn),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 1 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
        }
        out
    }

    pub fn key_values(&self) -> String {
        let mut out = String::new();
        writeln!(out, "spiking_ops={}", self.spiking_ops).unwrap();
        writeln!(out, "nonspiking_ops={}", self.nonspiking_ops).unwrap();
        writeln!(out, "steps={}", self.steps).unwrap();
        writeln!(out, "spike_rate={:.10}", self.spike_rate).unwrap();
        writeln!(out, "spike_rate_percent={:.6}", self.spike_rate * 100.0).unwrap();
        writeln!(out, "ecp_ann_pj={:.1}", self.ecp_ann).unwrap();
        writeln!(out, "ecp_snn_pj={:.1}", self.ecp_snn).unwrap();
        writeln!(out, "improvement_ratio={:.4}", self.improvement_ratio()).unwrap();
        out
    }
}

/// Energy of a network whose spiking layers run `steps` times at
/// `spike_rate` against the same network run as an ANN. Non-spiking layers
/// run once per sample in both and are charged at the AC rate in the spiking
/// model, as in the published estimate.
pub fn energy_report(layers: &[LayerSpec], steps: u64, spike_rate: f64, constants: EnergyConstants) -> Result<EnergyReport> {
    if steps == 0 {
        return config_err("steps must be >= 1");
    }
    if !(constants.e_mac > 0.0 && constants.e_ac > 0.0) {
        return config_err("energy constants must be positive");
    }
    let mut spiking_ops = 0u128;
    let mut nonspiking_ops = 0u128;
    let mut per_layer = Vec::with_capacity(layers.len());
    for spec in layers {
        spec.validate()?;
        let op_ann = op_count_ann(spec);
        let op_snn = if spec.spiking {
            spiking_ops += op_ann;
            op_count_snn(spec, spike_rate)? * steps as f64
        } else {
            nonspiking_ops += op_ann;
            op_ann as f64
        };
        per_layer.push(LayerEnergy {
            spec: spec.clone(),
            op_ann,
            op_snn,
        });
    }
    let dense = (spiking_ops * steps as u128) as f64;
    let ecp_snn = constants.e_ac * (dense * spike_rate + nonspiking_ops as f64);
    let ecp_ann = constants.e_mac * (dense + nonspiking_ops as f64);
    Ok(EnergyReport {
        layers: per_layer,
        steps,
        spike_rate,
        spiking_ops,
        nonspiking_ops,
        ecp_ann,
        ecp_snn,
        constants,
    })
}

/// The published rate convention: spikes over (per-step ops × steps).
pub fn paper_rate(spikes: f64, per_step_ops: u128, steps: u64) -> f64 {
    spikes / (per_step_ops as f64 * steps as f64)
}

/// Spike rate reproduced from the published spike count.
pub fn paper_reproduced_rate() -> f64 {
    let ops: u128 = crate::scnn::ScnnConfig::paper().layer_specs(PAPER_INPUT_CHANNELS)
        .iter()
        .filter(|l| l.spiking)
        .map(op_count_ann)
        .sum();
    paper_rate(PAPER_SPIKE_COUNT as f64, ops, PAPER_STEPS)
}

/// Full-size encoder/decoder with a 12-channel input, at the published rate.
pub fn paper_preset_report() -> EnergyReport {
    let layers = crate::scnn::ScnnConfig::paper().layer_specs(PAPER_INPUT_CHANNELS);
    energy_report(&layers, PAPER_STEPS, PAPER_SPIKE_RATE, EnergyConstants::default()).expect("valid preset")
}

/// Parses `kind k c_in c_out h_out w_out spiking` lines; `#` starts a comment.
pub fn parse_layer_specs(text: &str) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::Config(format!("layer spec line {}: {m}", i + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", f.len())));
        }
        let kind: LayerKind = f[0].parse().map_err(|e: Error| err(e.to_string()))?;
        let mut nums = [0usize; 5];
        for (n, s) in nums.iter_mut().zip(&f[1..6]) {
            *n = s.parse().map_err(|_| err(format!("bad integer {s:?}")))?;
        }
        let spiking = match f[6] {
            "1" | "true" | "yes" | "spiking" => true,
            "0" | "false" | "no" => false,
            other => return Err(err(format!("bad spiking flag {other:?}"))),
        };
        let [k, c_in, c_out, h_out, w_out] = nums;
        let spec = LayerSpec {
            kind,
            kw: k,
            kh: k,
            c_in,
            c_out,
            h_out,
            w_out,
            spiking,
        };
        spec.validate().map_err(|e| err(e.to_string()))?;
        layers.push(spec);
    }
    Ok(layers)
}

/// Spikes and sizes observed for one spiking layer over a measurement run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerTally {
    pub spikes: f64,
    /// Neurons per step.
    pub neurons: usize,
    /// MACs per step.
    pub ops: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRate {
    pub paper_convention: f64,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikeRateReport {
    pub layers: Vec<LayerRate>,
    pub total_spikes: f64,
    pub paper_convention: f64,
    /// Spikes over neuron-steps, in `[0, 1]`.
    pub fraction: f64,
}

/// Rates from tallies summed over `samples` runs of `steps` steps.
pub fn measure_spike_rate(tallies: &[LayerTally], steps: usize, samples: usize) -> Result<SpikeRateReport> {
    let neurons: usize = tallies.iter().map(|t| t.neurons).sum();
    if neurons == 0 || steps == 0 || samples == 0 {
        return config_err("spike-rate measurement needs neurons, steps and samples");
    }
    let runs = (steps * samples) as f64;
    let layers = tallies
        .iter()
        .map(|t| LayerRate {
            paper_convention: if t.ops == 0 { 0.0 } else { t.spikes / (t.ops as f64 * runs) },
            fraction: if t.neurons == 0 { 0.0 } else { t.spikes / (t.neurons as f64 * runs) },
        })
        .collect();
    let total_spikes: f64 = tallies.iter().map(|t| t.spikes).sum();
    let ops: u128 = tallies.iter().map(|t| t.ops).sum();
    Ok(SpikeRateReport {
        layers,
        total_spikes,
        paper_convention: total_spikes / (ops as f64 * runs),
        fraction: total_spikes / (neurons as f64 * runs),
    })
}
