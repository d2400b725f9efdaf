//! Spiking tokenizer, spiking self-attention and the ANN token-bottleneck
//! fusion stage.

use rand_chacha::ChaCha8Rng;
use spikefuse_tensor::{conv_output_extent, Graph, Tensor, Var};

use super::transformer::TransformerBlock;
use crate::error::{config_err, Error, Result};
use crate::neurons::{NeuronConfig, NeuronState};
use crate::nn::{Conv2d, GroupNorm, Init, Linear};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTokenConfig {
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    /// One conv-BN-LIF-pool stage per entry; the last width is the token dim.
    pub stem_channels: Vec<usize>,
    pub bottleneck_tokens: usize,
    pub ann_blocks: usize,
    pub mlp_ratio: usize,
    pub steps: usize,
    pub neuron: NeuronConfig,
}

impl SpikeTokenConfig {
    /// Native 260×346 sensor; four stride-2 pools leave a 16×21 grid.
    pub fn paper() -> Self {
        Self {
            input_channels: 2,
            height: 260,
            width: 346,
            stem_channels: vec![32, 64, 128, 256],
            bottleneck_tokens: 64,
            ann_blocks: 2,
            mlp_ratio: 4,
            steps: 16,
            neuron: NeuronConfig::default(),
        }
    }

    pub fn tiny() -> Self {
        Self {
            input_channels: 2,
            height: 32,
            width: 32,
            stem_channels: vec![16, 32],
            bottleneck_tokens: 8,
            ann_blocks: 2,
            mlp_ratio: 2,
            steps: 4,
            neuron: NeuronConfig::default(),
        }
    }

    pub fn dim(&self) -> usize {
        *self.stem_channels.last().expect("validated")
    }

    /// Token grid `(rows, cols)` after the stem.
    pub fn grid(&self) -> Result<(usize, usize)> {
        let (mut h, mut w) = (self.height, self.width);
        for _ in &self.stem_channels {
            let same = |e| conv_output_extent(e, 3, 1, 1, 1);
            match (same(h), same(w)) {
                (Some(nh), Some(nw)) if nh >= 2 && nw >= 2 => (h, w) = (nh / 2, nw / 2),
                _ => return config_err("input too small for the spiking tokenizer"),
            }
        }
        Ok((h, w))
    }

    pub fn event_tokens(&self) -> Result<usize> {
        self.grid().map(|(h, w)| h * w)
    }

    pub fn validate(&self) -> Result<()> {
        self.neuron.validate()?;
        if self.stem_channels.is_empty() || self.stem_channels.contains(&0) {
            return config_err("tokenizer needs at least one stage with >= 1 channel");
        }
        if self.bottleneck_tokens == 0 || self.mlp_ratio == 0 || self.steps == 0 || self.input_channels == 0 {
            return config_err("token counts, MLP ratio and steps must be >= 1");
        }
        self.grid().map(|_| ())
    }
}

#[derive(Clone, Debug)]
struct Stage {
    conv: Conv2d,
    norm: GroupNorm,
}

/// Multistep conv-BN-LIF-maxpool stages turning event bins into spike
/// tokens `[L, D]`.
#[derive(Clone, Debug)]
pub struct SpikeTokenizer {
    stages: Vec<Stage>,
}

impl SpikeTokenizer {
    pub fn new(cfg: &SpikeTokenConfig, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Self {
        let mut c_in = cfg.input_channels;
        let stages = cfg
            .stem_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let name = format!("{prefix}.stage{}", i + 1);
                let s = Stage {
                    conv: Conv2d::new(store, &format!("{name}.conv"), c_in, c, 3, 1, 1, false, Init::Default, rng),
                    norm: GroupNorm::new(store, &format!("{name}.bn"), c, c),
                };
                c_in = c;
                s
            })
            .collect();
        Self { stages }
    }

    /// One step on a `[1, C, H, W]` bin.
    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, states: &mut [NeuronState], neuron: &NeuronConfig) -> Result<Var> {
        let mut x = x;
        for (stage, st) in self.stages.iter().zip(states.iter_mut()) {
            let y = stage.conv.forward(g, p, x)?;
            let y = stage.norm.forward(g, p, y)?;
            let s = st.step(g, y, neuron)?;
            x = g.max_pool2d(s, 2, 2)?;
        }
        let s = g.shape(x).to_vec();
        let flat = g.reshape(x, vec![s[1], s[2] * s[3]])?;
        Ok(g.transpose(flat)?)
    }

    pub fn stages(&self) -> usize {
        self.stages.len()
    }
}

/// `Q·Kᵀ·V / √D` on `[L, D]` operands, without softmax.
pub fn spiking_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let d = g.shape(q)[1];
    let kt = g.transpose(k)?;
    let qk = g.matmul(q, kt)?;
    let qkv = g.matmul(qk, v)?;
    Ok(g.scale(qkv, 1.0 / (d as f64).sqrt()))
}

/// Spiking self-attention block:
/// `Q, K, V = LIF(BN(x·W))`, `A = Q·Kᵀ·V / √D` (no softmax), then
/// `y = x + BN(LIF(A)·W_o)` and `y + BN(LIF(BN(LIF(y)·W₁))·W₂)`.
#[derive(Clone, Debug)]
pub struct SpikingAttentionBlock {
    q: (Linear, GroupNorm),
    k: (Linear, GroupNorm),
    v: (Linear, GroupNorm),
    o: (Linear, GroupNorm),
    fc1: (Linear, GroupNorm),
    fc2: (Linear, GroupNorm),
    dim: usize,
}

/// Neuron state of every LIF site in a [`SpikingAttentionBlock`].
#[derive(Clone, Debug, Default)]
pub struct SpikingAttentionState {
    sites: [NeuronState; 6],
}

/// Intermediate values of one block step, exposed for inspection.
#[derive(Clone, Debug)]
pub struct SpikingAttentionTrace {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub attention: Var,
    pub output: Var,
}

impl SpikingAttentionBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, mlp_ratio: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = dim * mlp_ratio;
        let mut proj = |store: &mut ParamStore, n: &str, i: usize, o: usize| {
            let name = format!("{prefix}.{n}");
            (
                Linear::new(store, &name, i, o, false, Init::Default, rng),
                GroupNorm::new(store, &format!("{name}.bn"), o, o),
            )
        };
        let q = proj(store, "q", dim, dim);
        let k = proj(store, "k", dim, dim);
        let v = proj(store, "v", dim, dim);
        let o = proj(store, "o", dim, dim);
        let fc1 = proj(store, "fc1", dim, hidden);
        let fc2 = proj(store, "fc2", hidden, dim);
        Self { q, k, v, o, fc1, fc2, dim }
    }

    pub fn new_state() -> SpikingAttentionState {
        SpikingAttentionState::default()
    }

    fn project(g: &mut Graph, p: &Bound, layer: &(Linear, GroupNorm), x: Var) -> Result<Var> {
        let y = layer.0.forward(g, p, x)?;
        layer.1.forward_tokens(g, p, y)
    }

    /// One step on `[L, D]` tokens.
    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, state: &mut SpikingAttentionState, neuron: &NeuronConfig) -> Result<SpikingAttentionTrace> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.dim {
            return Err(Error::Shape(format!("expected [L, {}] tokens, got {:?}", self.dim, g.shape(x))));
        }
        let [sq, sk, sv, sa, s1, s2] = &mut state.sites;
        let q = Self::project(g, p, &self.q, x)?;
        let q = sq.step(g, q, neuron)?;
        let k = Self::project(g, p, &self.k, x)?;
        let k = sk.step(g, k, neuron)?;
        let v = Self::project(g, p, &self.v, x)?;
        let v = sv.step(g, v, neuron)?;

        let attention = spiking_attention(g, q, k, v)?;

        let a = sa.step(g, attention, neuron)?;
        let a = Self::project(g, p, &self.o, a)?;
        let y = g.add(x, a)?;

        let h = s1.step(g, y, neuron)?;
        let h = Self::project(g, p, &self.fc1, h)?;
        let h = s2.step(g, h, neuron)?;
        let h = Self::project(g, p, &self.fc2, h)?;
        let output = g.add(y, h)?;
        Ok(SpikingAttentionTrace {
            q,
            k,
            v,
            attention,
            output,
        })
    }
}

/// Spiking tokenizer + spiking attention over all steps, then learnable
/// bottleneck tokens joined with the step-averaged event tokens and passed
/// through ANN transformer blocks.
#[derive(Clone, Debug)]
pub struct TokenFusion {
    pub config: SpikeTokenConfig,
    tokenizer: SpikeTokenizer,
    attention: SpikingAttentionBlock,
    pub bottleneck_tokens: ParamId,
    blocks: Vec<TransformerBlock>,
}

#[derive(Clone, Debug)]
pub struct TokenFusionOutput {
    /// `[B, D]` rows for the frame branch.
    pub to_mst: Var,
    /// `[L, D]` rows for the classifier.
    pub event_tokens: Var,
    /// `[L, D]` step-averaged spiking attention output.
    pub spike_tokens: Var,
}

impl TokenFusion {
    pub fn new(config: SpikeTokenConfig, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim();
        let tokenizer = SpikeTokenizer::new(&config, store, &format!("{prefix}.tokenizer"), rng);
        let attention = SpikingAttentionBlock::new(store, &format!("{prefix}.ssa"), d, config.mlp_ratio, rng);
        let bottleneck_tokens = store.uniform(
            format!("{prefix}.bottleneck_tokens"),
            vec![config.bottleneck_tokens, d],
            super::bottleneck_init_bound(),
            rng,
        );
        let blocks = (0..config.ann_blocks)
            .map(|i| TransformerBlock::new(store, &format!("{prefix}.block{}", i + 1), d, config.mlp_ratio, rng))
            .collect();
        Ok(Self {
            config,
            tokenizer,
            attention,
            bottleneck_tokens,
            blocks,
        })
    }

    /// Spiking stages over `voxels [T, C, H, W]`; returns step-averaged
    /// `[L, D]` tokens.
    pub fn encode(&self, g: &mut Graph, p: &Bound, voxels: &Tensor) -> Result<Var> {
        let c = &self.config;
        let s = voxels.shape();
        if s != [c.steps, c.input_channels, c.height, c.width] {
            return Err(Error::Shape(format!(
                "spiking tokenizer expects [{}, {}, {}, {}], got {s:?}",
                c.steps, c.input_channels, c.height, c.width
            )));
        }
        let plane: usize = s[1..].iter().product();
        let mut stem_states = vec![NeuronState::new(); self.tokenizer.stages()];
        let mut attn_state = SpikingAttentionBlock::new_state();
        let mut sum: Option<Var> = None;
        for t in 0..c.steps {
            let bin = g.constant(Tensor::from_vec(vec![1, s[1], s[2], s[3]], voxels.data()[t * plane..(t + 1) * plane].to_vec()));
            let tokens = self.tokenizer.step(g, p, bin, &mut stem_states, &c.neuron)?;
            let out = self.attention.step(g, p, tokens, &mut attn_state, &c.neuron)?.output;
            sum = Some(match sum {
                Some(acc) => g.add(acc, out)?,
                None => out,
            });
        }
        Ok(g.scale(sum.expect("steps >= 1"), 1.0 / c.steps as f64))
    }

    /// `concat[bottleneck tokens, event tokens]` through the ANN blocks,
    /// split back into the two groups.
    pub fn fuse(&self, g: &mut Graph, p: &Bound, spike_tokens: Var) -> Result<(Var, Var)> {
        let b = self.config.bottleneck_tokens;
        let l = g.shape(spike_tokens)[0];
        let mut x = g.concat(&[p.var(self.bottleneck_tokens), spike_tokens], 0)?;
        for block in &self.blocks {
            x = block.forward(g, p, x)?;
        }
        Ok((g.narrow(x, 0, 0, b)?, g.narrow(x, 0, b, l)?))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, voxels: &Tensor) -> Result<TokenFusionOutput> {
        let spike_tokens = self.encode(g, p, voxels)?;
        let (to_mst, event_tokens) = self.fuse(g, p, spike_tokens)?;
        Ok(TokenFusionOutput {
            to_mst,
            event_tokens,
            spike_tokens,
        })
    }
}
