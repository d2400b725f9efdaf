use std::fs;

use spikefuse_core::pipeline::checkpoint::Checkpoint;
use spikefuse_core::pipeline::data::{read_labels, resample_indices};
use spikefuse_core::pipeline::metrics::rank;
use spikefuse_core::pipeline::train::evaluate;
use spikefuse_core::pipeline::*;
use spikefuse_core::Error;
use spikefuse_tensor::{Graph, Tensor};

fn tiny_data(seed: u64, per_class: usize) -> (tempfile::TempDir, Vec<Sample>) {
    let dir = tempfile::tempdir().unwrap();
    let mut s = SynthConfig::preset(Preset::Tiny);
    s.seed = seed;
    s.samples_per_class = per_class;
    generate_dataset(dir.path(), &s).unwrap();
    let (_, samples) = load_dataset(dir.path()).unwrap();
    (dir, samples)
}

#[test]
fn ranking_breaks_ties_by_index() {
    assert_eq!(rank(&[0.2, 0.5, 0.5, 0.1]), vec![1, 2, 0, 3]);
    let m = evaluate_scores(&[vec![0.5, 0.5, 0.1]], &[1], 3).unwrap();
    assert_eq!(m.top1, 0.0);
    assert_eq!(m.top5, 1.0);
    assert!(m.top5_trivial);
}

#[test]
fn top5_on_many_classes() {
    let row: Vec<f64> = (0..8).map(|i| i as f64).collect();
    // label 2 ranks sixth, label 3 fifth
    let m = evaluate_scores(&[row.clone(), row], &[2, 3], 8).unwrap();
    assert_eq!((m.top1, m.top5), (0.0, 0.5));
    assert!(!m.top5_trivial);
}

#[test]
fn mean_class_accuracy_skips_empty_classes() {
    let scores = vec![vec![0.9, 0.1, 0.0], vec![0.9, 0.1, 0.0], vec![0.1, 0.9, 0.0], vec![0.9, 0.1, 0.0]];
    // class 0: 2 of 2, class 1: 1 of 2, class 2 absent
    let m = evaluate_scores(&scores, &[0, 0, 1, 1], 3).unwrap();
    assert_eq!(m.top1, 0.75);
    assert_eq!(m.mean_class_accuracy, 0.75);
    let m = evaluate_scores(&scores[..3], &[0, 0, 1], 3).unwrap();
    assert!((m.top1 - 1.0).abs() < 1e-15 && m.mean_class_accuracy == 1.0);
    assert_eq!(m.per_class, vec![(2, 2), (1, 1), (0, 0)]);
}

#[test]
fn constant_predictions_separate_the_two_accuracies() {
    let always0 = |n: usize| vec![vec![0.8, 0.2]; n];
    let m = evaluate_scores(&always0(10), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1], 2).unwrap();
    assert_eq!((m.top1, m.mean_class_accuracy), (0.5, 0.5));
    let mut skewed = vec![0; 90];
    skewed.extend([1; 10]);
    let m = evaluate_scores(&always0(100), &skewed, 2).unwrap();
    assert!((m.top1 - 0.9).abs() < 1e-15);
    assert_eq!(m.mean_class_accuracy, 0.5);
    let m = evaluate_scores(&[vec![0.9, 0.1], vec![0.2, 0.7]], &[0, 1], 2).unwrap();
    assert_eq!((m.top1, m.top5, m.mean_class_accuracy), (1.0, 1.0, 1.0));
}

#[test]
fn bce_limits() {
    let mut g = Graph::new();
    let half = g.constant(Tensor::full(vec![1, 4], 0.5));
    let l = bce_loss(&mut g, half, &one_hot(3, 4).unwrap()).unwrap();
    assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    let perfect = g.constant(Tensor::from_vec(vec![1, 3], vec![0.0, 1.0, 0.0]));
    let l = bce_loss(&mut g, perfect, &one_hot(1, 3).unwrap()).unwrap();
    assert!(g.value(l).data()[0] < 1e-6);
}

#[test]
fn zeroed_head_scores_one_half() {
    let cfg = Config::preset(Preset::Tiny);
    let mut model = Model::new(cfg.model.clone(), 1).unwrap();
    for name in ["head.fc1.weight", "head.fc1.bias", "head.fc2.weight", "head.fc2.bias"] {
        let shape = model.store.value(model.store.id(name).unwrap()).shape().to_vec();
        model.store.set(name, Tensor::zeros(shape)).unwrap();
    }
    let input = ModelInput {
        voxels: Tensor::zeros(model.voxel_shape().to_vec()),
        frames: Tensor::zeros(model.frame_shape().to_vec()),
    };
    assert_eq!(model.predict(&input).unwrap(), vec![0.5, 0.5]);
}

#[test]
fn out_of_range_labels_are_errors() {
    assert!(evaluate_scores(&[vec![0.1, 0.2]], &[2], 2).is_err());
    assert!(one_hot(5, 5).is_err());
}

#[test]
fn bce_rejects_non_one_hot_targets() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::from_vec(vec![1, 3], vec![0.2, 0.3, 0.5]));
    for bad in [vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.5, 0.5, 0.0]] {
        assert!(bce_loss(&mut g, p, &Tensor::from_vec(vec![1, 3], bad)).is_err());
    }
    assert!(bce_loss(&mut g, p, &one_hot(2, 3).unwrap()).is_ok());
}

#[test]
fn adam_matches_its_update_rule() {
    let cfg = Config::preset(Preset::Tiny);
    let model = Model::new(cfg.model.clone(), 1).unwrap();
    let mut store = model.store.clone();
    let mut adam = Adam::new(&cfg.train, &store);
    let grads: Vec<Tensor> = store.values().iter().map(|t| t.map(|v| 0.5 * v + 0.01)).collect();
    let before = store.values();
    adam.step(&mut store, &grads).unwrap();
    adam.step(&mut store, &grads).unwrap();
    for ((b, g), a) in before.iter().zip(&grads).zip(store.values()) {
        for ((&p0, &gr), &p2) in b.data().iter().zip(g.data()).zip(a.data()).take(20) {
            // constant gradient: m̂ = g and v̂ = g² after any number of steps
            let mut p = p0;
            for _ in 0..2 {
                p -= 1e-3 * gr / (gr.abs() + 1e-8);
                p = p as f32 as f64;
            }
            assert!((p - p2).abs() <= 1e-6, "{p} vs {p2}");
        }
    }
}

#[test]
fn non_finite_gradients_name_the_parameter() {
    let cfg = Config::preset(Preset::Tiny);
    let model = Model::new(cfg.model.clone(), 1).unwrap();
    let mut store = model.store.clone();
    let mut adam = Adam::new(&cfg.train, &store);
    let mut grads = store.zero_grads();
    let id = store.id("head.fc2.bias").unwrap();
    grads[id.index()].data_mut()[0] = f64::NAN;
    let before = store.values();
    let err = adam.step(&mut store, &grads).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
    assert!(err.to_string().contains("head.fc2.bias"), "{err}");
    assert_eq!(store.values(), before);
}

#[test]
fn loss_drops_over_the_first_two_steps() {
    let (_dir, samples) = tiny_data(3, 1);
    for arch in ["scnn-mst", "spikeformer-mst", "scnn-only", "mst-only"] {
        let mut cfg = Config::preset(Preset::Tiny);
        cfg.set("arch", arch).unwrap();
        let input = prepare(&samples[0], &cfg.model).unwrap();
        let mut tr = Trainer::new(cfg).unwrap();
        let l1 = tr.train_step(&[(&input, samples[0].label)]).unwrap();
        let l2 = tr.train_step(&[(&input, samples[0].label)]).unwrap();
        assert!(l2 < l1, "{arch}: {l1} -> {l2}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = Config::preset(Preset::Tiny);
    let model = Model::new(cfg.model.clone(), 9).unwrap();
    let ck = Checkpoint::capture(&cfg, &model.store, 42);
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..4], b"CKP1");
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let mut fresh = Model::new(cfg.model.clone(), 10).unwrap();
    assert_ne!(fresh.store.values(), model.store.values());
    let warnings = back.restore(&cfg, &mut fresh.store).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(fresh.store.values(), model.store.values());
    assert_eq!(Config::parse(&back.config_text).unwrap(), cfg);
}

#[test]
fn checkpoint_digest_mismatch_warns() {
    let cfg = Config::preset(Preset::Tiny);
    let model = Model::new(cfg.model.clone(), 9).unwrap();
    let ck = Checkpoint::capture(&cfg, &model.store, 0);
    let mut other = cfg.clone();
    other.set("neuron.threshold", "0.9").unwrap();
    let mut store = model.store.clone();
    let warnings = ck.restore(&other, &mut store).unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].contains("digest"));
}

#[test]
fn checkpoint_shape_mismatch_names_the_parameter() {
    let cfg = Config::preset(Preset::Tiny);
    let model = Model::new(cfg.model.clone(), 9).unwrap();
    let ck = Checkpoint::capture(&cfg, &model.store, 0);
    let mut other = cfg.clone();
    other.set("classes", "3").unwrap();
    let mut target = Model::new(other.model.clone(), 9).unwrap();
    let err = ck.restore(&other, &mut target.store).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
    assert!(err.to_string().contains("head.fc2.weight"), "{err}");
}

#[test]
fn truncated_checkpoint_reports_offset() {
    let cfg = Config::preset(Preset::Tiny);
    let model = Model::new(cfg.model.clone(), 9).unwrap();
    let bytes = Checkpoint::capture(&cfg, &model.store, 0).to_bytes();
    for cut in [2, 20, 41, bytes.len() - 3] {
        let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err().to_string();
        assert!(err.contains("truncated at byte offset"), "{err}");
    }
    let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
    assert!(err.contains("values of `head.fc2.bias`"), "{err}");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn generated_data_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut s = SynthConfig::preset(Preset::Tiny);
    s.classes = 3;
    s.samples_per_class = 2;
    s.seed = 5;
    generate_dataset(a.path(), &s).unwrap();
    generate_dataset(b.path(), &s).unwrap();
    for rel in ["labels.txt", "class_02/sample_001/events.evt1", "class_00/sample_000/frames/0015.ppm", "class_01/sample_000/timestamps.txt"] {
        let x = fs::read(a.path().join(rel)).unwrap();
        assert_eq!(x, fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
    assert_eq!(read_labels(a.path()).unwrap(), vec!["class_00", "class_01", "class_02"]);
    let c = tempfile::tempdir().unwrap();
    s.seed = 6;
    generate_dataset(c.path(), &s).unwrap();
    let rel = "class_00/sample_000/events.evt1";
    assert_ne!(fs::read(a.path().join(rel)).unwrap(), fs::read(c.path().join(rel)).unwrap());
}

#[test]
fn faster_classes_emit_more_events() {
    let (_dir, samples) = tiny_data(11, 6);
    let mean = |c: usize| {
        let v: Vec<usize> = samples.iter().filter(|s| s.label == c).map(|s| s.events.len()).collect();
        v.iter().sum::<usize>() as f64 / v.len() as f64
    };
    assert!(samples.iter().all(|s| !s.events.is_empty() && s.frames.len() == 16));
    assert!(mean(1) > mean(0) * 1.3, "{} vs {}", mean(1), mean(0));
}

#[test]
fn prepare_keeps_every_event() {
    let (_dir, samples) = tiny_data(2, 2);
    let cfg = Config::preset(Preset::Tiny);
    for s in &samples {
        let x = prepare(s, &cfg.model).unwrap();
        assert_eq!(x.voxels.shape(), &[4, 2, 32, 32]);
        assert_eq!(x.voxels.sum(), s.events.len() as f64);
        assert_eq!(x.frames.shape(), &[16, 3, 32, 32]);
    }
    assert_eq!(resample_indices(16, 8), vec![0, 2, 4, 6, 9, 11, 13, 15]);
}

#[test]
fn short_training_is_deterministic() {
    let (_dir, samples) = tiny_data(4, 3);
    let run = || {
        let mut cfg = Config::preset(Preset::Tiny);
        cfg.train.max_steps = 4;
        cfg.train.seed = 17;
        let data: Vec<_> = samples.iter().map(|s| (prepare(s, &cfg.model).unwrap(), s.label)).collect();
        let mut tr = Trainer::new(cfg).unwrap();
        let logs = tr.fit(&data, |_| {}).unwrap();
        (logs, tr.model.store.values(), evaluate(&tr.model, &data).unwrap().1)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.last().unwrap().key_values(), b.0.last().unwrap().key_values());
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.0.last().unwrap().step, 4);
}

#[test]
fn feature_maps_are_named() {
    let cfg = Config::preset(Preset::Tiny);
    let model = Model::new(cfg.model.clone(), 1).unwrap();
    let input = ModelInput {
        voxels: Tensor::full(model.voxel_shape().to_vec(), 1.0),
        frames: Tensor::full(model.frame_shape().to_vec(), 0.5),
    };
    let mut g = Graph::new();
    let p = model.store.bind_frozen(&mut g);
    let out = model.forward(&mut g, &p, &input).unwrap();
    let names: Vec<&str> = out.maps.iter().map(|(n, _)| n.as_str()).collect();
    for n in ["scnn_fused", "mbf_combined", "mst_memory1", "head_input", "scores"] {
        assert!(names.contains(&n), "{n} missing from {names:?}");
    }
    assert_eq!(g.shape(out.features), &[1, 64 + 128]);
    assert_eq!(out.tallies.len(), 8);
}

mod properties {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn top1_never_exceeds_top5(
            classes in 2usize..9,
            rows in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 8), 0usize..8), 1..30),
        ) {
            let scores: Vec<Vec<f64>> = rows.iter().map(|(r, _)| r[..classes].to_vec()).collect();
            let labels: Vec<usize> = rows.iter().map(|(_, l)| l % classes).collect();
            let m = evaluate_scores(&scores, &labels, classes).unwrap();
            prop_assert!(m.top1 <= m.top5);
            prop_assert!((0.0..=1.0).contains(&m.mean_class_accuracy));
            prop_assert_eq!(m.per_class.iter().map(|c| c.1).sum::<usize>(), labels.len());
        }

        #[test]
        fn checkpoint_bytes_round_trip(
            step in any::<u64>(),
            tensors in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 1..20), 0..6),
        ) {
            let ck = Checkpoint {
                digest: [7; 32],
                step,
                config_text: "preset = tiny\n".into(),
                tensors: tensors
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (format!("t{i}"), Tensor::from_vec(vec![v.len()], v.iter().map(|&x| x as f64).collect())))
                    .collect(),
            };
            prop_assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn head_input_length_matches_features(
            arch in prop::sample::select(vec!["scnn-mst", "spikeformer-mst", "scnn-only", "mst-only"]),
            mbf in any::<bool>(),
            b in prop::sample::select(vec![8usize, 16, 32]),
            pool in 1usize..3,
            clips in prop::sample::select(vec![2usize, 4, 8]),
        ) {
            let mut cfg = Config::preset(Preset::Tiny);
            cfg.set("arch", arch).unwrap();
            cfg.set("mbf", &mbf.to_string()).unwrap();
            cfg.set("bottleneck_dim", &b.to_string()).unwrap();
            cfg.set("mbf.pool_size", &pool.to_string()).unwrap();
            cfg.set("clips", &clips.to_string()).unwrap();
            let model = Model::new(cfg.model.clone(), 2).unwrap();
            let input = ModelInput {
                voxels: Tensor::full(model.voxel_shape().to_vec(), 1.0),
                frames: Tensor::full(model.frame_shape().to_vec(), 0.5),
            };
            let mut g = Graph::new();
            let p = model.store.bind_frozen(&mut g);
            let out = model.forward(&mut g, &p, &input).unwrap();
            prop_assert_eq!(g.shape(out.features), &[1, cfg.model.head_input_len()]);
            prop_assert_eq!(g.shape(out.scores), &[1, 2]);
        }
    }
}
