//! Spiking convolutional encoder with membrane-potential taps and the ANN
//! deconvolution decoder that turns the taps into one feature map.

use rand_chacha::ChaCha8Rng;
use spikefuse_tensor::{conv_output_extent, conv_transpose_output_extent, Graph, Padding, Tensor, Var};

use crate::energy::{LayerKind, LayerSpec};
use crate::error::{config_err, Result};
use crate::neurons::{NeuronConfig, NeuronState};
use crate::nn::{Conv2d, Init};
use crate::params::{Bound, ParamStore};

pub const KERNEL: usize = 3;
pub const DEFAULT_INIT_GAIN: f64 = 3.0;
pub const DECONV_KERNEL: usize = 4;
/// Layers (1-based) whose mean membrane potential is tapped as A1, A2, A3.
pub const TAP_LAYERS: [usize; 3] = [4, 6, 8];
/// Trims the `k=4, s=1` deconvolution back to its input extent.
pub const T1_CROP: Padding = Padding {
    top: 1,
    bottom: 2,
    left: 1,
    right: 2,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ScnnConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub channels: [usize; 8],
    /// 1-based layers followed by a 2×2/2 max pool.
    pub pool_after: Vec<usize>,
    pub steps: usize,
    pub neuron: NeuronConfig,
    pub decoder: [usize; 2],
    pub out_channels: usize,
    /// Standard deviation of the spiking conv weights times `√fan_in`.
    pub init_gain: f64,
}

impl ScnnConfig {
    pub fn paper() -> Self {
        Self {
            input_channels: 2,
            input_height: 240,
            input_width: 240,
            channels: [64, 64, 128, 128, 256, 256, 512, 512],
            pool_after: vec![2, 4, 6],
            steps: 16,
            neuron: NeuronConfig::default(),
            decoder: [256, 128],
            out_channels: 16,
            init_gain: DEFAULT_INIT_GAIN,
        }
    }

    pub fn tiny() -> Self {
        Self {
            input_channels: 2,
            input_height: 32,
            input_width: 32,
            channels: [4, 4, 8, 8, 16, 16, 32, 32],
            pool_after: vec![2, 4, 6],
            steps: 4,
            neuron: NeuronConfig::default(),
            decoder: [32, 16],
            out_channels: 16,
            init_gain: DEFAULT_INIT_GAIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.neuron.validate()?;
        if self.steps == 0 {
            return config_err("simulation steps must be >= 1");
        }
        if self.channels.contains(&0) || self.decoder.contains(&0) || self.out_channels == 0 || self.input_channels == 0 {
            return config_err("channel counts must be >= 1");
        }
        if self.pool_after.windows(2).any(|w| w[0] >= w[1]) || self.pool_after.iter().any(|&l| !(1..=8).contains(&l)) {
            return config_err(format!("pool placements {:?} must be strictly increasing in 1..=8", self.pool_after));
        }
        self.plan().map(|_| ())
    }

    /// Spatial extents through the network.
    pub fn plan(&self) -> Result<ScnnPlan> {
        let mut ladder = Vec::with_capacity(8);
        let (mut h, mut w) = (self.input_height, self.input_width);
        for layer in 1..=8 {
            let same = |e| conv_output_extent(e, KERNEL, 1, 1, 1);
            let (Some(nh), Some(nw)) = (same(h), same(w)) else {
                return config_err("empty feature map in the encoder");
            };
            ladder.push((nh, nw));
            (h, w) = (nh, nw);
            if self.pool_after.contains(&layer) {
                if h < 2 || w < 2 {
                    return config_err(format!("layer {layer} output {h}×{w} is too small to pool"));
                }
                (h, w) = (h / 2, w / 2);
            }
        }
        let tap = |l: usize| ladder[l - 1];
        let (a1, a2, a3) = (tap(TAP_LAYERS[0]), tap(TAP_LAYERS[1]), tap(TAP_LAYERS[2]));
        let t2 = (
            conv_transpose_output_extent(a3.0, DECONV_KERNEL, 2, 1, 1).unwrap_or(0),
            conv_transpose_output_extent(a3.1, DECONV_KERNEL, 2, 1, 1).unwrap_or(0),
        );
        let pooled_a1 = (a1.0 / 2, a1.1 / 2);
        if t2 != a2 || pooled_a1 != a2 {
            return config_err(format!(
                "decoder needs A1 = 2·A2 = 4·A3 in extent, got A1 {a1:?}, A2 {a2:?}, A3 {a3:?}"
            ));
        }
        Ok(ScnnPlan { ladder, a1, a2, a3 })
    }

    /// Operation-count specs: the eight spiking convolutions and the two
    /// deconvolutions, with the first layer reading `input_channels` planes.
    pub fn layer_specs(&self, input_channels: usize) -> Vec<LayerSpec> {
        let plan = self.plan().expect("valid config");
        let mut specs = Vec::with_capacity(10);
        let mut c_in = input_channels;
        for (i, &c_out) in self.channels.iter().enumerate() {
            let (h, w) = plan.ladder[i];
            specs.push(LayerSpec {
                kind: LayerKind::Conv,
                kw: KERNEL,
                kh: KERNEL,
                c_in,
                c_out,
                h_out: h,
                w_out: w,
                spiking: true,
            });
            c_in = c_out;
        }
        for (c_in, c_out, (h, w)) in [
            (self.channels[7], self.decoder[0], plan.a3),
            (self.decoder[0], self.decoder[1], plan.a2),
        ] {
            specs.push(LayerSpec {
                kind: LayerKind::Deconv,
                kw: DECONV_KERNEL,
                kh: DECONV_KERNEL,
                c_in,
                c_out,
                h_out: h,
                w_out: w,
                spiking: false,
            });
        }
        specs
    }

    /// `[C, H, W]` of the fused decoder output.
    pub fn fused_shape(&self) -> Result<[usize; 3]> {
        let a2 = self.plan()?.a2;
        Ok([self.out_channels, a2.0, a2.1])
    }
}

/// Extents derived from a config: `ladder[i]` is the conv output of layer
/// `i + 1` (before any pool), and the three tap extents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScnnPlan {
    pub ladder: Vec<(usize, usize)>,
    pub a1: (usize, usize),
    pub a2: (usize, usize),
    pub a3: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct Scnn {
    pub config: ScnnConfig,
    convs: Vec<Conv2d>,
    t1: crate::params::ParamId,
    t2: crate::params::ParamId,
    fuse: Conv2d,
}

#[derive(Clone, Debug)]
pub struct ScnnOutput {
    pub a1: Var,
    pub a2: Var,
    pub a3: Var,
    pub fused: Var,
    /// Spikes emitted per layer, summed over steps.
    pub spike_counts: Vec<f64>,
    /// Neurons per layer per step.
    pub neurons: Vec<usize>,
}

impl Scnn {
    pub fn new(config: ScnnConfig, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::with_capacity(8);
        let mut c_in = config.input_channels;
        for (i, &c_out) in config.channels.iter().enumerate() {
            let name = format!("{prefix}.conv{}", i + 1);
            convs.push(Conv2d::new(store, &name, c_in, c_out, KERNEL, 1, 1, false, Init::Std(config.init_gain), rng));
            c_in = c_out;
        }
        let [d1, d2] = config.decoder;
        let k = DECONV_KERNEL;
        let t1 = store.uniform(
            format!("{prefix}.t1.weight"),
            vec![config.channels[7], d1, k, k],
            1.0 / ((d1 * k * k) as f64).sqrt(),
            rng,
        );
        let t2 = store.uniform(
            format!("{prefix}.t2.weight"),
            vec![d1, d2, k, k],
            1.0 / ((d2 * k * k) as f64).sqrt(),
            rng,
        );
        let fuse_in = d2 + config.channels[5] + config.channels[3];
        let fuse = Conv2d::new(store, &format!("{prefix}.fuse"), fuse_in, config.out_channels, 1, 1, 0, false, Init::Default, rng);
        Ok(Self {
            config,
            convs,
            t1,
            t2,
            fuse,
        })
    }

    /// One step through the eight spiking layers. Returns the membrane
    /// potentials of every layer.
    pub fn encode_step(&self, g: &mut Graph, p: &Bound, raster: Var, states: &mut [NeuronState]) -> Result<Vec<Var>> {
        let cfg = &self.config;
        let shape = g.shape(raster);
        if shape.len() != 4 || shape[1] != cfg.input_channels || shape[2] != cfg.input_height || shape[3] != cfg.input_width {
            return Err(crate::Error::Shape(format!(
                "encoder expects [N, {}, {}, {}], got {shape:?}",
                cfg.input_channels, cfg.input_height, cfg.input_width
            )));
        }
        let mut x = raster;
        let mut potentials = Vec::with_capacity(8);
        for (i, (conv, state)) in self.convs.iter().zip(states.iter_mut()).enumerate() {
            let current = conv.forward(g, p, x)?;
            x = state.step(g, current, &cfg.neuron)?;
            potentials.push(state.potential().expect("stepped"));
            if cfg.pool_after.contains(&(i + 1)) {
                x = g.max_pool2d(x, 2, 2)?;
            }
        }
        Ok(potentials)
    }

    /// Deconvolution decoder over the three taps.
    pub fn decode(&self, g: &mut Graph, p: &Bound, a1: Var, a2: Var, a3: Var) -> Result<Var> {
        let t1 = g.conv_transpose2d(a3, p.var(self.t1), 1, Padding::ZERO, T1_CROP)?;
        let t2 = g.conv_transpose2d(t1, p.var(self.t2), 2, Padding::uniform(1), Padding::ZERO)?;
        let a1p = g.max_pool2d(a1, 2, 2)?;
        let cat = g.concat(&[t2, a2, a1p], 1)?;
        let fused = self.fuse.forward(g, p, cat)?;
        Ok(g.relu(fused))
    }

    /// Runs all steps of `voxels [T, C, H, W]` (one sample).
    pub fn forward(&self, g: &mut Graph, p: &Bound, voxels: &Tensor) -> Result<ScnnOutput> {
        let cfg = &self.config;
        let s = voxels.shape();
        if s.len() != 4 || s[0] != cfg.steps {
            return Err(crate::Error::Shape(format!(
                "expected {} time bins of [C, H, W], got {s:?}",
                cfg.steps
            )));
        }
        let plane: usize = s[1..].iter().product();
        let mut states = vec![NeuronState::new(); 8];
        let mut sums: [Option<Var>; 3] = [None; 3];
        let mut spike_counts = vec![0.0; 8];
        for t in 0..cfg.steps {
            let step = Tensor::from_vec(vec![1, s[1], s[2], s[3]], voxels.data()[t * plane..(t + 1) * plane].to_vec());
            let raster = g.constant(step);
            let pots = self.encode_step(g, p, raster, &mut states)?;
            for (count, st) in spike_counts.iter_mut().zip(&states) {
                *count += g.value(st.spikes().expect("stepped")).sum();
            }
            for (sum, &layer) in sums.iter_mut().zip(&TAP_LAYERS) {
                let u = pots[layer - 1];
                *sum = Some(match *sum {
                    Some(acc) => g.add(acc, u)?,
                    None => u,
                });
            }
        }
        let inv = 1.0 / cfg.steps as f64;
        let [a1, a2, a3] = sums.map(|s| g.scale(s.expect("steps >= 1"), inv));
        let fused = self.decode(g, p, a1, a2, a3)?;
        let neurons = states
            .iter()
            .map(|st| g.value(st.spikes().expect("stepped")).numel())
            .collect();
        Ok(ScnnOutput {
            a1,
            a2,
            a3,
            fused,
            spike_counts,
            neurons,
        })
    }
}
