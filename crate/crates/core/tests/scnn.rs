use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikefuse_core::neurons::{NeuronConfig, NeuronKind};
use spikefuse_core::params::ParamStore;
use spikefuse_core::scnn::{Scnn, ScnnConfig};
use spikefuse_tensor::{Graph, Tensor};

fn build(cfg: ScnnConfig, seed: u64) -> (Scnn, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Scnn::new(cfg, &mut store, "scnn", &mut rng).unwrap();
    (m, store)
}

fn random_voxels(cfg: &ScnnConfig, seed: u64, density: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = vec![cfg.steps, cfg.input_channels, cfg.input_height, cfg.input_width];
    Tensor::from_fn(shape, |_| if rng.random_bool(density) { rng.random_range(1..4) as f64 } else { 0.0 })
}

#[test]
fn paper_extent_ladder_and_taps() {
    let plan = ScnnConfig::paper().plan().unwrap();
    let ladder: Vec<usize> = plan.ladder.iter().map(|&(h, w)| h * w).collect();
    let expect: Vec<usize> = [240, 240, 120, 120, 60, 60, 30, 30].iter().map(|e| e * e).collect();
    assert_eq!(ladder, expect);
    assert_eq!((plan.a1, plan.a2, plan.a3), ((120, 120), (60, 60), (30, 30)));
    assert_eq!(ScnnConfig::paper().fused_shape().unwrap(), [16, 60, 60]);
}

#[test]
fn tiny_forward_matches_plan() {
    let cfg = ScnnConfig::tiny();
    let plan = cfg.plan().unwrap();
    let (m, store) = build(cfg.clone(), 1);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let out = m.forward(&mut g, &p, &random_voxels(&cfg, 2, 0.2)).unwrap();
    assert_eq!(g.shape(out.fused), &[1, 16, 8, 8]);
    assert_eq!(g.shape(out.a1), &[1, 8, plan.a1.0, plan.a1.1]);
    assert_eq!(g.shape(out.a2), &[1, 16, plan.a2.0, plan.a2.1]);
    assert_eq!(g.shape(out.a3), &[1, 32, plan.a3.0, plan.a3.1]);
    assert!(g.value(out.fused).all_finite());
    let neurons: Vec<usize> = cfg
        .channels
        .iter()
        .zip(&plan.ladder)
        .map(|(c, (h, w))| c * h * w)
        .collect();
    assert_eq!(out.neurons, neurons);
}

#[test]
fn empty_input_gives_zero_everything() {
    let cfg = ScnnConfig::tiny();
    let (m, store) = build(cfg.clone(), 3);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let zeros = Tensor::zeros(vec![cfg.steps, 2, 32, 32]);
    let out = m.forward(&mut g, &p, &zeros).unwrap();
    assert_eq!(g.value(out.fused).max_abs(), 0.0);
    assert!(out.spike_counts.iter().all(|&c| c == 0.0));
}

#[test]
fn step_count_mismatch_is_rejected() {
    let cfg = ScnnConfig::tiny();
    let (m, store) = build(cfg, 3);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    assert!(m.forward(&mut g, &p, &Tensor::zeros(vec![3, 2, 32, 32])).is_err());
    assert!(m.forward(&mut g, &p, &Tensor::zeros(vec![4, 2, 16, 16])).is_err());
}

#[test]
fn taps_are_step_means_of_potentials() {
    let mut cfg = ScnnConfig::tiny();
    cfg.steps = 2;
    let (m, store) = build(cfg.clone(), 4);
    let vox = random_voxels(&cfg, 5, 0.3);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let out = m.forward(&mut g, &p, &vox).unwrap();

    // re-run step by step and average by hand
    let mut g2 = Graph::new();
    let p2 = store.bind(&mut g2);
    let mut states = vec![spikefuse_core::neurons::NeuronState::new(); 8];
    let plane = 2 * 32 * 32;
    let mut per_step = Vec::new();
    let mut recount = 0.0;
    for t in 0..2 {
        let r = g2.constant(Tensor::from_vec(vec![1, 2, 32, 32], vox.data()[t * plane..(t + 1) * plane].to_vec()));
        let pots = m.encode_step(&mut g2, &p2, r, &mut states).unwrap();
        per_step.push([3, 5, 7].map(|l| g2.value(pots[l]).clone()));
        for st in &states {
            let s = g2.value(st.spikes().unwrap());
            assert!(s.data().iter().all(|&v| v == 0.0 || v == 1.0));
            recount += s.data().iter().filter(|&&v| v == 1.0).count() as f64;
        }
    }
    for (k, tap) in [out.a1, out.a2, out.a3].iter().enumerate() {
        let expect = per_step[0][k].zip_map(&per_step[1][k], |a, b| (a + b) / 2.0).unwrap();
        let got = g.value(*tap);
        assert!(got.data().iter().zip(expect.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
    assert_eq!(out.spike_counts.iter().sum::<f64>(), recount);
}

#[test]
fn single_pixel_activity_stays_in_receptive_cone() {
    let mut cfg = ScnnConfig::tiny();
    cfg.steps = 3;
    let (m, mut store) = build(cfg.clone(), 6);
    let mut c_in = 2;
    for (i, &c) in cfg.channels.iter().enumerate() {
        let name = format!("scnn.conv{}.weight", i + 1);
        store.set(&name, Tensor::full(vec![c, c_in, 3, 3], 0.5)).unwrap();
        c_in = c;
    }
    let (py, px) = (9usize, 20usize);
    let mut vox = Tensor::zeros(vec![3, 2, 32, 32]);
    for t in 0..3 {
        vox.set(&[t, 0, py, px], 4.0);
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let mut states = vec![spikefuse_core::neurons::NeuronState::new(); 8];
    let plane = 2 * 32 * 32;

    // hand-propagated cone: dilate by one pixel per 3×3 conv, halve at pools
    let mut masks = Vec::new();
    let mut mask = vec![vec![false; 32]; 32];
    mask[py][px] = true;
    for layer in 1..=8 {
        let n = mask.len();
        let mut grown = vec![vec![false; n]; n];
        for y in 0..n {
            for x in 0..n {
                grown[y][x] = (y.saturating_sub(1)..=(y + 1).min(n - 1))
                    .any(|yy| (x.saturating_sub(1)..=(x + 1).min(n - 1)).any(|xx| mask[yy][xx]));
            }
        }
        masks.push(grown.clone());
        mask = grown;
        if cfg.pool_after.contains(&layer) {
            let h = n / 2;
            mask = (0..h)
                .map(|y| (0..h).map(|x| mask[2 * y][2 * x] || mask[2 * y][2 * x + 1] || mask[2 * y + 1][2 * x] || mask[2 * y + 1][2 * x + 1]).collect())
                .collect();
        }
    }

    let mut any_inside = false;
    for t in 0..3 {
        let r = g.constant(Tensor::from_vec(vec![1, 2, 32, 32], vox.data()[t * plane..(t + 1) * plane].to_vec()));
        let pots = m.encode_step(&mut g, &p, r, &mut states).unwrap();
        for (l, pot) in pots.iter().enumerate() {
            let u = g.value(*pot);
            let (c, h, w) = (u.shape()[1], u.shape()[2], u.shape()[3]);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let v = u.at(&[0, ch, y, x]);
                        if masks[l][y][x] {
                            any_inside |= v != 0.0;
                        } else {
                            assert_eq!(v, 0.0, "layer {} ({y},{x}) outside the cone", l + 1);
                        }
                    }
                }
            }
        }
    }
    assert!(any_inside);
}

#[test]
fn every_weight_receives_gradient() {
    let cfg = ScnnConfig::tiny();
    let (m, store) = build(cfg.clone(), 8);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let out = m.forward(&mut g, &p, &random_voxels(&cfg, 9, 0.3)).unwrap();
    let loss = spikefuse_tensor::project(&mut g, out.fused, 1).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut acc = store.zero_grads();
    p.accumulate(&grads, &mut acc);
    for ((name, _), gr) in store.iter().zip(&acc) {
        assert!(gr.max_abs() > 0.0, "{name} got no gradient");
    }
}

#[test]
fn doubling_events_under_if_neurons() {
    let mut cfg = ScnnConfig::tiny();
    cfg.neuron = NeuronConfig::new(NeuronKind::If);
    let mut decreases = 0;
    for seed in 0..20 {
        let (m, store) = build(cfg.clone(), 100 + seed);
        let vox = random_voxels(&cfg, 200 + seed, 0.15);
        let doubled = vox.map(|v| 2.0 * v);
        let total = |v: &Tensor| {
            let mut g = Graph::new();
            let p = store.bind_frozen(&mut g);
            m.forward(&mut g, &p, v).unwrap().spike_counts.iter().sum::<f64>()
        };
        if total(&doubled) < total(&vox) {
            decreases += 1;
        }
    }
    assert_eq!(decreases, 0);
}
