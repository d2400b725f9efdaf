//! Memory support transformer over RGB frame embeddings.
//!
//! Frames are embedded by a small conv stem and split into clips. In each
//! clip the last embedding is the query; the memory from the previous clip
//! followed by the remaining embeddings runs through a GRU, and the query
//! attends over the GRU hidden states (plus an optional extra token). The
//! attention output becomes the memory for the next clip.

use rand_chacha::ChaCha8Rng;
use spikefuse_tensor::{Graph, Tensor, Var};

use crate::error::{config_err, Error, Result};
use crate::nn::{Conv2d, Init, Linear};
use crate::params::{Bound, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct MstConfig {
    /// Frames per sample (N).
    pub frames: usize,
    /// Number of clips (K); each holds N/K frames.
    pub clips: usize,
    /// Embedding width d.
    pub dim: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Output channels of the three conv-relu-pool stem stages.
    pub stem_channels: [usize; 3],
    pub output_dim: usize,
}

impl MstConfig {
    pub fn paper() -> Self {
        Self {
            frames: 16,
            clips: 4,
            dim: 512,
            frame_height: 240,
            frame_width: 240,
            stem_channels: [64, 128, 256],
            output_dim: 4096,
        }
    }

    pub fn tiny() -> Self {
        Self {
            frames: 16,
            clips: 4,
            dim: 64,
            frame_height: 32,
            frame_width: 32,
            stem_channels: [8, 16, 32],
            output_dim: 128,
        }
    }

    pub fn clip_size(&self) -> usize {
        self.frames / self.clips.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.output_dim == 0 || self.stem_channels.contains(&0) {
            return config_err("MST widths must be >= 1");
        }
        if self.clips == 0 || self.frames == 0 || !self.frames.is_multiple_of(self.clips) {
            return config_err(format!("{} frames cannot be split into {} equal clips", self.frames, self.clips));
        }
        if self.frame_height < 8 || self.frame_width < 8 {
            return config_err("stem needs frames of at least 8×8");
        }
        Ok(())
    }
}

/// Index ranges of each clip as `(support indices, query index)`.
pub fn clip_indices(n: usize, clip_size: usize) -> Result<Vec<(std::ops::Range<usize>, usize)>> {
    if clip_size == 0 || n == 0 || !n.is_multiple_of(clip_size) {
        return config_err(format!("{n} embeddings do not divide into clips of {clip_size}"));
    }
    Ok((0..n / clip_size)
        .map(|k| {
            let start = k * clip_size;
            (start..start + clip_size - 1, start + clip_size - 1)
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct Clip {
    /// `[1, d]` rows.
    pub support: Vec<Var>,
    pub query: Var,
}

/// Splits `[N, d]` embeddings into clips whose last row is the query.
pub fn divide_clips(g: &mut Graph, embeddings: Var, clip_size: usize) -> Result<Vec<Clip>> {
    let n = g.shape(embeddings)[0];
    clip_indices(n, clip_size)?
        .into_iter()
        .map(|(support, query)| {
            Ok(Clip {
                support: support.map(|i| g.narrow(embeddings, 0, i, 1)).collect::<std::result::Result<_, _>>()?,
                query: g.narrow(embeddings, 0, query, 1)?,
            })
        })
        .collect()
}

/// GRU weights; each gate term is a [`Linear`] with its own bias.
#[derive(Clone, Debug)]
pub struct Gru {
    pub ir: Linear,
    pub hr: Linear,
    pub iz: Linear,
    pub hz: Linear,
    pub in_: Linear,
    pub hn: Linear,
    pub dim: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut lin = |n: &str| Linear::new(store, &format!("{prefix}.{n}"), dim, dim, true, Init::Default, rng);
        Self {
            ir: lin("ir"),
            hr: lin("hr"),
            iz: lin("iz"),
            hz: lin("hz"),
            in_: lin("in"),
            hn: lin("hn"),
            dim,
        }
    }

    fn gate(&self, g: &mut Graph, p: &Bound, a: &Linear, x: Var, b: &Linear, h: Var) -> Result<Var> {
        let ax = a.forward(g, p, x)?;
        let bh = b.forward(g, p, h)?;
        Ok(g.add(ax, bh)?)
    }

    /// One step on `[1, d]` rows:
    /// `r = σ(W_ir x + b_ir + W_hr h + b_hr)`, `z` likewise,
    /// `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`,
    /// `h' = (1 − z) ⊙ n + z ⊙ h`.
    pub fn cell(&self, g: &mut Graph, p: &Bound, x: Var, h: Var) -> Result<Var> {
        for v in [x, h] {
            if g.shape(v) != [1, self.dim] {
                return Err(Error::Shape(format!("GRU expects [1, {}] rows, got {:?}", self.dim, g.shape(v))));
            }
        }
        let r = self.gate(g, p, &self.ir, x, &self.hr, h)?;
        let r = g.sigmoid(r);
        let z = self.gate(g, p, &self.iz, x, &self.hz, h)?;
        let z = g.sigmoid(z);
        let nx = self.in_.forward(g, p, x)?;
        let nh = self.hn.forward(g, p, h)?;
        let rn = g.mul(r, nh)?;
        let n = g.add(nx, rn)?;
        let n = g.tanh(n);
        let keep = g.one_minus(z);
        let a = g.mul(keep, n)?;
        let b = g.mul(z, h)?;
        Ok(g.add(a, b)?)
    }

    /// Runs the cell over `inputs` from `h_0 = 0`; returns every hidden state.
    pub fn sequence(&self, g: &mut Graph, p: &Bound, inputs: &[Var]) -> Result<Vec<Var>> {
        if inputs.is_empty() {
            return Err(Error::Shape("GRU sequence is empty".into()));
        }
        let mut h = g.constant(Tensor::zeros(vec![1, self.dim]));
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            h = self.cell(g, p, x, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    /// `[1, d]`.
    pub output: Var,
    /// `[1, L]` softmax weights.
    pub weights: Var,
}

/// `softmax(q·Kᵀ/√d)·V` with `K = V = rows` (and `extra` appended when given).
pub fn cross_attention(g: &mut Graph, query: Var, rows: &[Var], extra: Option<Var>) -> Result<Attention> {
    if rows.is_empty() {
        return Err(Error::Shape("cross-attention needs at least one key".into()));
    }
    let d = g.shape(query)[1];
    let mut kv: Vec<Var> = rows.to_vec();
    kv.extend(extra);
    let kv = if kv.len() == 1 { kv[0] } else { g.concat(&kv, 0)? };
    let kt = g.transpose(kv)?;
    let logits = g.matmul(query, kt)?;
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    let weights = g.softmax(logits, 1)?;
    let output = g.matmul(weights, kv)?;
    Ok(Attention { output, weights })
}

#[derive(Clone, Debug)]
pub struct Mst {
    pub config: MstConfig,
    stem: Vec<Conv2d>,
    embed: Linear,
    pub gru: Gru,
    head: Linear,
}

#[derive(Clone, Debug)]
pub struct MstOutput {
    /// `[1, output_dim]`.
    pub output: Var,
    /// Memory after each clip, `[1, d]` each.
    pub memories: Vec<Var>,
    pub hiddens: Vec<Vec<Var>>,
}

impl Mst {
    pub fn new(config: MstConfig, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut stem = Vec::with_capacity(3);
        let mut c_in = 3;
        for (i, &c) in config.stem_channels.iter().enumerate() {
            stem.push(Conv2d::new(store, &format!("{prefix}.stem{}", i + 1), c_in, c, 3, 1, 1, true, Init::He, rng));
            c_in = c;
        }
        let embed = Linear::new(store, &format!("{prefix}.embed"), c_in, config.dim, true, Init::Default, rng);
        let gru = Gru::new(store, &format!("{prefix}.gru"), config.dim, rng);
        let head = Linear::new(
            store,
            &format!("{prefix}.out"),
            config.clips * config.dim,
            config.output_dim,
            true,
            Init::Default,
            rng,
        );
        Ok(Self {
            config,
            stem,
            embed,
            gru,
            head,
        })
    }

    /// `[N, 3, H, W]` frames to `[N, d]` embeddings.
    pub fn embed(&self, g: &mut Graph, p: &Bound, frames: Var) -> Result<Var> {
        let c = &self.config;
        let s = g.shape(frames);
        if s.len() != 4 || s[1] != 3 || s[2] != c.frame_height || s[3] != c.frame_width {
            return Err(Error::Shape(format!(
                "stem expects [N, 3, {}, {}], got {s:?}",
                c.frame_height, c.frame_width
            )));
        }
        let n = s[0];
        let mut x = frames;
        for conv in &self.stem {
            x = conv.forward(g, p, x)?;
            x = g.relu(x);
            x = g.max_pool2d(x, 2, 2)?;
        }
        let x = g.adaptive_avg_pool2d(x, 1, 1)?;
        let x = g.reshape(x, vec![n, self.config.stem_channels[2]])?;
        self.embed.forward(g, p, x)
    }

    /// Clip recurrence over `[N, d]` embeddings; `token` joins every clip's
    /// keys and values.
    pub fn forward_embeddings(&self, g: &mut Graph, p: &Bound, embeddings: Var, memory0: Option<Var>, token: Option<Var>) -> Result<MstOutput> {
        let c = &self.config;
        if g.shape(embeddings) != [c.frames, c.dim] {
            return Err(Error::Shape(format!(
                "expected [{}, {}] embeddings, got {:?}",
                c.frames,
                c.dim,
                g.shape(embeddings)
            )));
        }
        let clips = divide_clips(g, embeddings, c.clip_size())?;
        let mut memory = match memory0 {
            Some(m) => m,
            None => g.constant(Tensor::zeros(vec![1, c.dim])),
        };
        let mut memories = Vec::with_capacity(clips.len());
        let mut hiddens = Vec::with_capacity(clips.len());
        for clip in clips {
            let mut seq = vec![memory];
            seq.extend(clip.support);
            let hs = self.gru.sequence(g, p, &seq)?;
            memory = cross_attention(g, clip.query, &hs, token)?.output;
            memories.push(memory);
            hiddens.push(hs);
        }
        let cat = if memories.len() == 1 { memories[0] } else { g.concat(&memories, 1)? };
        let output = self.head.forward(g, p, cat)?;
        Ok(MstOutput {
            output,
            memories,
            hiddens,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, frames: Var, token: Option<Var>) -> Result<MstOutput> {
        let e = self.embed(g, p, frames)?;
        self.forward_embeddings(g, p, e, None, token)
    }
}
