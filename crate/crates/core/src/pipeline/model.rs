//! Assembles the encoders, fusion stage, frame branch and classifier head
//! for each architecture.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikefuse_tensor::{Graph, Tensor, Var};

use super::config::{Arch, ModelConfig};
use crate::energy::LayerTally;
use crate::error::{Error, Result};
use crate::fusion::{bottleneck_to_token, Mbf, TokenFusion};
use crate::mst::Mst;
use crate::nn::{Init, Linear};
use crate::params::{Bound, ParamStore};
use crate::scnn::Scnn;

/// One preprocessed sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// `[T, C, H, W]` voxelized events.
    pub voxels: Tensor,
    /// `[N, 3, H, W]` frames.
    pub frames: Tensor,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// `[1, C]` class probabilities.
    pub scores: Var,
    /// `[1, F]` classifier input.
    pub features: Var,
    /// Named intermediate maps, in forward order.
    pub maps: Vec<(String, Var)>,
    /// Per spiking layer (event encoder only).
    pub tallies: Vec<LayerTally>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    scnn: Option<Scnn>,
    mbf: Option<Mbf>,
    tokens: Option<TokenFusion>,
    token_proj: Option<Linear>,
    mst: Option<Mst>,
    fc1: Linear,
    fc2: Linear,
}

impl Model {
    /// Builds a model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let arch = config.arch;
        let scnn = if arch.uses_scnn() {
            Some(Scnn::new(config.scnn.clone(), &mut store, "scnn", &mut rng)?)
        } else {
            None
        };
        let mbf = if arch == Arch::ScnnMst && config.use_mbf {
            Some(Mbf::new(config.mbf.clone(), &mut store, "mbf", &mut rng)?)
        } else {
            None
        };
        let tokens = if arch.uses_tokens() {
            Some(TokenFusion::new(config.tokens.clone(), &mut store, "tokens", &mut rng)?)
        } else {
            None
        };
        let token_in = match (&mbf, &tokens) {
            (Some(_), _) => Some(config.mbf.event_len()),
            (_, Some(_)) => Some(config.tokens.dim()),
            _ => None,
        };
        let token_proj = token_in.map(|n| Linear::new(&mut store, "fusion.token", n, config.mst.dim, true, Init::Default, &mut rng));
        let mst = if arch.uses_mst() {
            Some(Mst::new(config.mst.clone(), &mut store, "mst", &mut rng)?)
        } else {
            None
        };
        let fc1 = Linear::new(&mut store, "head.fc1", config.head_input_len(), config.head_hidden, true, Init::Default, &mut rng);
        let fc2 = Linear::new(&mut store, "head.fc2", config.head_hidden, config.num_classes, true, Init::Default, &mut rng);
        Ok(Self {
            config,
            store,
            scnn,
            mbf,
            tokens,
            token_proj,
            mst,
            fc1,
            fc2,
        })
    }

    /// Shape the event tensor of a [`ModelInput`] must have.
    pub fn voxel_shape(&self) -> [usize; 4] {
        let (c, h, w) = self.config.event_extent();
        [self.config.scnn.steps, c, h, w]
    }

    pub fn frame_shape(&self) -> [usize; 4] {
        let m = &self.config.mst;
        [m.frames, 3, m.frame_height, m.frame_width]
    }

    pub fn check_input(&self, input: &ModelInput) -> Result<()> {
        let (v, f) = (self.voxel_shape(), self.frame_shape());
        if input.voxels.shape() != v || input.frames.shape() != f {
            return Err(Error::Shape(format!(
                "model expects voxels {v:?} and frames {f:?}, got {:?} and {:?}",
                input.voxels.shape(),
                input.frames.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, input: &ModelInput) -> Result<ModelOutput> {
        self.check_input(input)?;
        let mut maps = Vec::new();
        let mut tallies = Vec::new();
        let mut event_feat = None;
        let mut token = None;

        if let Some(scnn) = &self.scnn {
            let out = scnn.forward(g, p, &input.voxels)?;
            let specs = self.config.scnn.layer_specs(self.config.scnn.input_channels);
            for (i, (&spikes, &neurons)) in out.spike_counts.iter().zip(&out.neurons).enumerate() {
                tallies.push(LayerTally {
                    spikes,
                    neurons,
                    ops: crate::energy::op_count_ann(&specs[i]),
                });
            }
            maps.extend([("scnn_a1", out.a1), ("scnn_a2", out.a2), ("scnn_a3", out.a3), ("scnn_fused", out.fused)].map(|(n, v)| (n.to_string(), v)));
            match &self.mbf {
                Some(mbf) => {
                    let m = mbf.forward(g, p, out.fused)?;
                    maps.push(("mbf_combined".to_string(), m.combined));
                    event_feat = Some(flat_row(g, m.event_repr)?);
                    let proj = self.token_proj.as_ref().expect("built with the bottleneck block");
                    token = Some(bottleneck_to_token(g, p, proj, m.bottleneck)?);
                }
                None => {
                    let ps = self.config.mbf.pool_size;
                    let pooled = g.adaptive_avg_pool2d(out.fused, ps, ps)?;
                    maps.push(("scnn_pooled".to_string(), pooled));
                    event_feat = Some(flat_row(g, pooled)?);
                }
            }
        }

        if let Some(tf) = &self.tokens {
            let out = tf.forward(g, p, &input.voxels)?;
            maps.push(("spike_tokens".to_string(), out.spike_tokens));
            maps.push(("event_tokens".to_string(), out.event_tokens));
            maps.push(("bottleneck_tokens".to_string(), out.to_mst));
            event_feat = Some(mean_row(g, out.event_tokens)?);
            let pooled = mean_row(g, out.to_mst)?;
            let proj = self.token_proj.as_ref().expect("built with the token fusion stage");
            token = Some(proj.forward(g, p, pooled)?);
        }

        let mut parts: Vec<Var> = event_feat.into_iter().collect();
        if let Some(mst) = &self.mst {
            let frames = g.constant(input.frames.clone());
            let out = mst.forward(g, p, frames, token)?;
            for (i, m) in out.memories.iter().enumerate() {
                maps.push((format!("mst_memory{}", i + 1), *m));
            }
            maps.push(("mst_output".to_string(), out.output));
            parts.push(out.output);
        }
        let features = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 1)? };
        maps.push(("head_input".to_string(), features));
        let h = self.fc1.forward(g, p, features)?;
        let h = g.relu(h);
        let logits = self.fc2.forward(g, p, h)?;
        let scores = g.sigmoid(logits);
        maps.push(("scores".to_string(), scores));
        Ok(ModelOutput {
            scores,
            features,
            maps,
            tallies,
        })
    }

    /// Forward pass without gradients; returns the `C` class scores.
    pub fn predict(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, input)?;
        Ok(g.value(out.scores).data().to_vec())
    }

    /// Values of every named intermediate map for one sample.
    pub fn feature_maps(&self, input: &ModelInput) -> Result<Vec<(String, Tensor)>> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, input)?;
        Ok(out.maps.into_iter().map(|(n, v)| (n, g.value(v).clone())).collect())
    }

    /// Event-encoder spike tallies summed over `inputs`.
    pub fn spike_tallies(&self, inputs: &[ModelInput]) -> Result<Vec<LayerTally>> {
        let mut total: Vec<LayerTally> = Vec::new();
        for input in inputs {
            let mut g = Graph::new();
            let p = self.store.bind_frozen(&mut g);
            let out = self.forward(&mut g, &p, input)?;
            if total.is_empty() {
                total = out.tallies;
            } else {
                for (t, o) in total.iter_mut().zip(&out.tallies) {
                    t.spikes += o.spikes;
                }
            }
        }
        Ok(total)
    }
}

fn flat_row(g: &mut Graph, x: Var) -> Result<Var> {
    let n = g.value(x).numel();
    Ok(g.reshape(x, vec![1, n])?)
}

fn mean_row(g: &mut Graph, rows: Var) -> Result<Var> {
    let m = g.mean_axis(rows, 0)?;
    flat_row(g, m)
}

/// One-hot target over `classes`.
pub fn one_hot(label: usize, classes: usize) -> Result<Tensor> {
    if label >= classes {
        return Err(Error::Dataset(format!("class index {label} out of range for {classes} classes")));
    }
    let mut t = Tensor::zeros(vec![1, classes]);
    t.data_mut()[label] = 1.0;
    Ok(t)
}

/// Mean binary cross-entropy of `[1, C]` scores against a one-hot target.
pub fn bce_loss(g: &mut Graph, scores: Var, target: &Tensor) -> Result<Var> {
    let ones = target.data().iter().filter(|&&y| y == 1.0).count();
    let zeros = target.data().iter().filter(|&&y| y == 0.0).count();
    if ones != 1 || ones + zeros != target.numel() {
        return Err(Error::Shape(format!("target is not one-hot: {:?}", target.data())));
    }
    Ok(g.bce(scores, target)?)
}
