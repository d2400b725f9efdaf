use rand_chacha::ChaCha8Rng;
use spikefuse_tensor::{Graph, Padding, Var};

use crate::error::{config_err, Error, Result};
use crate::nn::{Conv2d, GroupNorm, Init, Linear};
use crate::params::{Bound, ParamId, ParamStore};

pub const DEFORM_LAYERS: usize = 4;

/// Half-width of the uniform initialization of the bottleneck map.
pub fn bottleneck_init_bound() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq)]
pub struct MbfConfig {
    /// Channels of the bottleneck map Z; the block outputs twice this.
    pub bottleneck: usize,
    /// Channels of the incoming event features.
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub groups: usize,
    /// Side of the final adaptive average pool.
    pub pool_size: usize,
}

impl MbfConfig {
    pub fn paper() -> Self {
        Self {
            bottleneck: 16,
            in_channels: 16,
            height: 60,
            width: 60,
            groups: 4,
            pool_size: 14,
        }
    }

    pub fn tiny() -> Self {
        Self {
            height: 8,
            width: 8,
            pool_size: 2,
            ..Self::paper()
        }
    }

    pub fn out_channels(&self) -> usize {
        2 * self.bottleneck
    }

    /// Length of the flattened event half.
    pub fn event_len(&self) -> usize {
        self.bottleneck * self.pool_size * self.pool_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.bottleneck == 0 || self.in_channels == 0 || self.pool_size == 0 {
            return config_err("bottleneck block extents must be >= 1");
        }
        if self.groups == 0 || !self.out_channels().is_multiple_of(self.groups) {
            return config_err(format!(
                "{} block channels do not split into {} groups",
                self.out_channels(),
                self.groups
            ));
        }
        if self.height / 4 == 0 || self.width / 4 == 0 {
            return config_err(format!("{}×{} map is too small for two 2×2 pools", self.height, self.width));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct DeformLayer {
    weight: ParamId,
    offsets: Conv2d,
    norm: GroupNorm,
}

/// Bottleneck map Z plus a conv / deformable-conv block over
/// `concat[Z, event features]`.
#[derive(Clone, Debug)]
pub struct Mbf {
    pub config: MbfConfig,
    pub z: ParamId,
    conv: Conv2d,
    deform: Vec<DeformLayer>,
}

#[derive(Clone, Debug)]
pub struct MbfOutput {
    /// `[1, b, P, P]`, routed to the classifier.
    pub event_repr: Var,
    /// `[1, b, P, P]`, routed to the frame branch.
    pub bottleneck: Var,
    /// Full `[1, 2b, P, P]` block output.
    pub combined: Var,
}

impl Mbf {
    pub fn new(config: MbfConfig, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let b = config.bottleneck;
        let c = config.out_channels();
        let z = store.uniform(
            format!("{prefix}.z"),
            vec![1, b, config.height, config.width],
            bottleneck_init_bound(),
            rng,
        );
        let conv = Conv2d::new(store, &format!("{prefix}.conv"), b + config.in_channels, c, 3, 1, 1, true, Init::He, rng);
        let deform = (1..=DEFORM_LAYERS)
            .map(|i| {
                let name = format!("{prefix}.deform{i}");
                DeformLayer {
                    weight: store.uniform(format!("{name}.weight"), vec![c, c, 3, 3], (6.0 / (9 * c) as f64).sqrt(), rng),
                    offsets: Conv2d::new(store, &format!("{name}.offset"), c, 18, 3, 1, 1, true, Init::Zero, rng),
                    norm: GroupNorm::new(store, &format!("{name}.norm"), c, config.groups),
                }
            })
            .collect();
        Ok(Self { config, z, conv, deform })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, features: Var) -> Result<MbfOutput> {
        self.run(g, p, features, false)
    }

    /// The same block with every deformable convolution replaced by a
    /// standard one (what it computes while the offsets are zero).
    pub fn forward_standard(&self, g: &mut Graph, p: &Bound, features: Var) -> Result<MbfOutput> {
        self.run(g, p, features, true)
    }

    fn run(&self, g: &mut Graph, p: &Bound, features: Var, standard: bool) -> Result<MbfOutput> {
        let c = &self.config;
        if g.shape(features) != [1, c.in_channels, c.height, c.width] {
            return Err(Error::Shape(format!(
                "bottleneck block expects [1, {}, {}, {}] features, got {:?}",
                c.in_channels,
                c.height,
                c.width,
                g.shape(features)
            )));
        }
        let x = g.concat(&[p.var(self.z), features], 1)?;
        let x = self.conv.forward(g, p, x)?;
        let x = g.relu(x);
        let mut x = g.max_pool2d(x, 2, 2)?;
        for (i, layer) in self.deform.iter().enumerate() {
            let w = p.var(layer.weight);
            let y = if standard {
                g.conv2d(x, w, 1, Padding::uniform(1))?
            } else {
                let off = layer.offsets.forward(g, p, x)?;
                g.deform_conv2d(x, w, off, 1, Padding::uniform(1))?
            };
            let y = layer.norm.forward(g, p, y)?;
            x = g.relu(y);
            if i == 0 {
                x = g.max_pool2d(x, 2, 2)?;
            }
        }
        let combined = g.adaptive_avg_pool2d(x, c.pool_size, c.pool_size)?;
        let b = c.bottleneck;
        Ok(MbfOutput {
            event_repr: g.narrow(combined, 1, 0, b)?,
            bottleneck: g.narrow(combined, 1, b, b)?,
            combined,
        })
    }
}

/// `flatten → linear` to a `[1, d]` token.
pub fn bottleneck_to_token(g: &mut Graph, p: &Bound, proj: &Linear, bottleneck: Var) -> Result<Var> {
    let n = g.value(bottleneck).numel();
    let flat = g.reshape(bottleneck, vec![1, n])?;
    proj.forward(g, p, flat)
}
