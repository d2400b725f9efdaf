use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikefuse_core::fusion::{bottleneck_to_token, spiking_attention, Mbf, MbfConfig, SpikeTokenConfig, SpikingAttentionBlock, TokenFusion};
use spikefuse_core::neurons::NeuronConfig;
use spikefuse_core::nn::{Init, Linear};
use spikefuse_core::params::ParamStore;
use spikefuse_tensor::{project, Graph, Tensor};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn zero_all(store: &mut ParamStore, keep: impl Fn(&str) -> bool) {
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for n in names.iter().filter(|n| !keep(n)) {
        let shape = store.value(store.id(n).unwrap()).shape().to_vec();
        store.set(n, Tensor::zeros(shape)).unwrap();
    }
}

#[test]
fn paper_block_shapes_and_split() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mbf = Mbf::new(MbfConfig::paper(), &mut store, "mbf", &mut rng).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(Tensor::from_fn(vec![1, 16, 60, 60], |_| rng.random::<f64>()));
    let out = mbf.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.shape(out.combined), &[1, 32, 14, 14]);
    assert_eq!(g.shape(out.event_repr), &[1, 16, 14, 14]);
    assert_eq!(g.shape(out.bottleneck), &[1, 16, 14, 14]);
    assert_eq!(g.value(out.event_repr).numel(), 3136);
    assert_eq!(MbfConfig::paper().event_len(), 3136);
    let c = g.value(out.combined).data();
    assert_eq!(g.value(out.event_repr).data(), &c[..3136]);
    assert_eq!(g.value(out.bottleneck).data(), &c[3136..]);
}

#[test]
fn split_follows_bottleneck_dim() {
    for b in [8, 16, 32] {
        let cfg = MbfConfig { bottleneck: b, ..MbfConfig::tiny() };
        let mut store = ParamStore::new();
        let mbf = Mbf::new(cfg, &mut store, "mbf", &mut ChaCha8Rng::seed_from_u64(b as u64)).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::ones(vec![1, 16, 8, 8]));
        let out = mbf.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(out.event_repr), &[1, b, 2, 2]);
        assert_eq!(g.shape(out.bottleneck), &[1, b, 2, 2]);
    }
}

#[test]
fn zero_inputs_and_biases_give_zero_output() {
    let mut store = ParamStore::new();
    let mbf = Mbf::new(MbfConfig::tiny(), &mut store, "mbf", &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    store.set("mbf.z", Tensor::zeros(vec![1, 16, 8, 8])).unwrap();
    zero_all(&mut store, |n| !n.ends_with(".bias"));
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(Tensor::zeros(vec![1, 16, 8, 8]));
    let out = mbf.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.value(out.combined).max_abs(), 0.0);
}

#[test]
fn zero_offsets_match_standard_convolutions_exactly() {
    for cfg in [MbfConfig::tiny(), MbfConfig::paper()] {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mbf = Mbf::new(cfg.clone(), &mut store, "mbf", &mut rng).unwrap();
        let feats = Tensor::from_fn(vec![1, 16, cfg.height, cfg.width], |_| rng.random::<f64>());
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(feats);
        let a = mbf.forward(&mut g, &p, x).unwrap();
        let b = mbf.forward_standard(&mut g, &p, x).unwrap();
        assert_eq!(g.value(a.combined).data(), g.value(b.combined).data());
    }
}

#[test]
fn bottleneck_token_projection() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let proj = Linear::new(&mut store, "tok", 3136, 64, true, Init::Default, &mut rng);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let z = g.constant(Tensor::zeros(vec![1, 16, 14, 14]));
    let t = bottleneck_to_token(&mut g, &p, &proj, z).unwrap();
    assert_eq!(g.shape(t), &[1, 64]);
    assert_eq!(g.value(t).data(), store.value(proj.bias.unwrap()).data());
}

#[test]
fn spiking_attention_arithmetic() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::zeros(vec![5, 4]));
    let a = spiking_attention(&mut g, z, z, z).unwrap();
    assert_eq!(g.value(a).max_abs(), 0.0);

    let tok = [1.0, 0.0, 1.0, 1.0];
    let t = g.constant(Tensor::from_vec(vec![1, 4], tok.to_vec()));
    let a = spiking_attention(&mut g, t, t, t).unwrap();
    let dot: f64 = tok.iter().map(|v| v * v).sum();
    let expect: Vec<f64> = tok.iter().map(|v| dot * v / 2.0).collect();
    assert_eq!(g.value(a).data(), expect.as_slice());
}

#[test]
fn spiking_block_sites_are_binary() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let block = SpikingAttentionBlock::new(&mut store, "ssa", 16, 2, &mut rng);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let mut state = SpikingAttentionBlock::new_state();
    let neuron = NeuronConfig::default();
    for _ in 0..4 {
        let x = g.constant(Tensor::from_fn(vec![12, 16], |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }));
        let tr = block.step(&mut g, &p, x, &mut state, &neuron).unwrap();
        for v in [tr.q, tr.k, tr.v] {
            assert!(g.value(v).data().iter().all(|&s| s == 0.0 || s == 1.0));
        }
        // every Q·K product is a product of two bits
        let (q, k) = (g.value(tr.q), g.value(tr.k));
        for i in 0..12 {
            for j in 0..12 {
                for c in 0..16 {
                    let prod = q.at(&[i, c]) * k.at(&[j, c]);
                    assert!(prod == 0.0 || prod == 1.0);
                }
            }
        }
        assert_eq!(g.shape(tr.output), &[12, 16]);
    }
}

#[test]
fn paper_token_extents() {
    let cfg = SpikeTokenConfig::paper();
    assert_eq!(cfg.grid().unwrap(), (16, 21));
    assert_eq!(cfg.event_tokens().unwrap(), 336);

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tf = TokenFusion::new(cfg, &mut store, "sf", &mut rng).unwrap();
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let tokens = g.constant(Tensor::from_fn(vec![336, 256], |_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }));
    let joined = g.concat(&[p.var(tf.bottleneck_tokens), tokens], 0).unwrap();
    assert_eq!(g.shape(joined), &[400, 256]);
    let (to_mst, event) = tf.fuse(&mut g, &p, tokens).unwrap();
    assert_eq!(g.shape(to_mst), &[64, 256]);
    assert_eq!(g.shape(event), &[336, 256]);
    assert!(g.value(event).all_finite());
}

#[test]
fn token_fusion_zero_in_zero_out() {
    let mut store = ParamStore::new();
    let tf = TokenFusion::new(SpikeTokenConfig::tiny(), &mut store, "sf", &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    zero_all(&mut store, |_| false);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let tokens = g.constant(Tensor::zeros(vec![64, 32]));
    let (a, b) = tf.fuse(&mut g, &p, tokens).unwrap();
    assert_eq!(g.value(a).max_abs(), 0.0);
    assert_eq!(g.value(b).max_abs(), 0.0);
}

#[test]
fn tiny_token_pipeline_and_gradients() {
    let cfg = SpikeTokenConfig::tiny();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tf = TokenFusion::new(cfg.clone(), &mut store, "sf", &mut rng).unwrap();
    let vox = Tensor::from_fn(vec![4, 2, 32, 32], |_| if rng.random_bool(0.2) { rng.random_range(1..3) as f64 } else { 0.0 });
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let out = tf.forward(&mut g, &p, &vox).unwrap();
    assert_eq!(g.shape(out.to_mst), &[8, 32]);
    assert_eq!(g.shape(out.event_tokens), &[64, 32]);
    let a = project(&mut g, out.to_mst, 1).unwrap();
    let b = project(&mut g, out.event_tokens, 2).unwrap();
    let loss = g.add(a, b).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.wrt(&g, p.var(tf.bottleneck_tokens)).max_abs() > 0.0);
}

#[test]
fn gradient_reaches_bottleneck_map() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mbf = Mbf::new(MbfConfig::tiny(), &mut store, "mbf", &mut rng).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(rand_tensor(&mut rng, vec![1, 16, 8, 8]));
    let out = mbf.forward(&mut g, &p, x).unwrap();
    let loss = project(&mut g, out.combined, 3).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.wrt(&g, p.var(mbf.z)).max_abs() > 0.0);
    let off = store.id("mbf.deform1.offset.weight").unwrap();
    assert!(grads.wrt(&g, p.var(off)).max_abs() > 0.0);
}
