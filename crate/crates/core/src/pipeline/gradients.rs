//! Finite-difference checks of every differentiable operator and of the
//! full tiny model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikefuse_tensor::{grad_check, project, GradCheckOptions, GradReport, Padding, SpikeForward, Tensor, TensorError};

use super::config::{Arch, ModelConfig, Preset};
use super::model::{bce_loss, one_hot, Model, ModelInput};
use crate::error::Result;
use crate::mst::{cross_attention, Gru};
use crate::params::{Bound, ParamStore};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn lift<T>(r: Result<T>) -> spikefuse_tensor::Result<T> {
    r.map_err(|e| TensorError::Invalid {
        op: "model",
        detail: e.to_string(),
    })
}

fn opts(max_coords: usize) -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-5,
        tolerance: GRADIENT_TOLERANCE,
        max_coords,
    }
}

/// Operator-level checks, by name.
pub fn operator_checks(seed: u64) -> Result<Vec<(String, GradReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let o = opts(64);

    let x = rand_tensor(&mut rng, vec![2, 3, 6, 6], -1.0, 1.0);
    let w = rand_tensor(&mut rng, vec![4, 3, 3, 3], -0.5, 0.5);
    out.push(("conv2d".into(), grad_check(|g, v| {
        let y = g.conv2d(v[0], v[1], 2, Padding::uniform(1))?;
        project(g, y, 1)
    }, &[x, w], &o)?));

    let x = rand_tensor(&mut rng, vec![1, 3, 4, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, vec![3, 2, 4, 4], -0.5, 0.5);
    out.push(("conv_transpose2d".into(), grad_check(|g, v| {
        let y = g.conv_transpose2d(v[0], v[1], 2, Padding::uniform(1), Padding::ZERO)?;
        project(g, y, 2)
    }, &[x, w], &o)?));

    let x = rand_tensor(&mut rng, vec![1, 2, 5, 5], -1.0, 1.0);
    let w = rand_tensor(&mut rng, vec![3, 2, 3, 3], -0.5, 0.5);
    let off = rand_tensor(&mut rng, vec![1, 18, 5, 5], -1.4, 1.4);
    out.push(("deform_conv2d".into(), grad_check(|g, v| {
        let y = g.deform_conv2d(v[0], v[1], v[2], 1, Padding::uniform(1))?;
        project(g, y, 3)
    }, &[x, w, off], &o)?));

    let x = rand_tensor(&mut rng, vec![1, 2, 6, 6], -1.0, 1.0);
    out.push(("max_pool2d".into(), grad_check(|g, v| {
        let y = g.max_pool2d(v[0], 2, 2)?;
        project(g, y, 4)
    }, &[x], &o)?));

    let x = rand_tensor(&mut rng, vec![2, 6, 3, 3], -1.0, 1.0);
    let gain = rand_tensor(&mut rng, vec![6], 0.5, 1.5);
    let bias = rand_tensor(&mut rng, vec![6], -0.5, 0.5);
    out.push(("group_norm".into(), grad_check(|g, v| {
        let y = g.group_norm(v[0], 3, v[1], v[2], crate::nn::NORM_EPS)?;
        project(g, y, 5)
    }, &[x, gain, bias], &o)?));

    let a = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, vec![4, 5], -1.0, 1.0);
    out.push(("matmul".into(), grad_check(|g, v| {
        let y = g.matmul(v[0], v[1])?;
        project(g, y, 6)
    }, &[a, b], &o)?));

    let x = rand_tensor(&mut rng, vec![3, 5], -2.0, 2.0);
    out.push(("softmax".into(), grad_check(|g, v| {
        let y = g.softmax(v[0], 1)?;
        project(g, y, 7)
    }, &[x], &o)?));

    let d = 6;
    let mut store = ParamStore::new();
    let gru = Gru::new(&mut store, "gru", d, &mut rng);
    let mut inputs = vec![rand_tensor(&mut rng, vec![1, d], -1.0, 1.0), rand_tensor(&mut rng, vec![1, d], -1.0, 1.0)];
    inputs.extend(store.values());
    out.push(("gru_cell".into(), grad_check(|g, v| {
        let p = Bound::from_vars(v[2..].to_vec());
        let h = lift(gru.cell(g, &p, v[0], v[1]))?;
        project(g, h, 8)
    }, &inputs, &o)?));

    let inputs: Vec<Tensor> = (0..5).map(|_| rand_tensor(&mut rng, vec![1, d], -1.0, 1.0)).collect();
    out.push(("cross_attention".into(), grad_check(|g, v| {
        let a = lift(cross_attention(g, v[0], &v[1..4], Some(v[4])))?;
        project(g, a.output, 9)
    }, &inputs, &o)?));

    let probs = rand_tensor(&mut rng, vec![1, 5], 0.05, 0.95);
    let target = one_hot(2, 5)?;
    out.push(("bce".into(), grad_check(|g, v| g.bce(v[0], &target), &[probs], &o)?));
    Ok(out)
}

/// Tiny model of `arch` with every spike replaced by its ramp, checked on
/// `coords` coordinates of each parameter tensor. Offset convolutions start
/// from small random weights instead of zero.
pub fn model_check(arch: Arch, coords: usize, seed: u64) -> Result<GradReport> {
    let mut cfg = ModelConfig::preset(Preset::Tiny);
    cfg.arch = arch;
    cfg.scnn.neuron.forward = SpikeForward::Ramp;
    cfg.sync();
    let mut model = Model::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    // zero offsets sample exactly on grid points, where bilinear
    // interpolation has a kink
    let offsets: Vec<(String, Vec<usize>)> = model
        .store
        .iter()
        .filter(|(n, _)| n.contains(".offset."))
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    for (name, shape) in offsets {
        model.store.set(&name, rand_tensor(&mut rng, shape, -0.05, 0.05))?;
    }
    let voxels = Tensor::from_fn(model.voxel_shape().to_vec(), |_| if rng.random_bool(0.2) { rng.random_range(1..4) as f64 } else { 0.0 });
    let frames = rand_tensor(&mut rng, model.frame_shape().to_vec(), 0.0, 1.0);
    let input = ModelInput { voxels, frames };
    let target = one_hot(1, model.config.num_classes)?;
    Ok(grad_check(|g, v| {
        let p = Bound::from_vars(v.to_vec());
        let out = lift(model.forward(g, &p, &input))?;
        lift(bce_loss(g, out.scores, &target))
    }, &model.store.values(), &opts(coords))?)
}
