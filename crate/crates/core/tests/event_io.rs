use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikefuse_core::event_io::*;

fn random_stream(rng: &mut ChaCha8Rng, n: usize, width: u16, height: u16) -> EventStream {
    let mut t = 0u64;
    let events = (0..n)
        .map(|_| {
            t += rng.random_range(0..5u64);
            let p = if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
            Event::new(t, rng.random_range(0..width), rng.random_range(0..height), p)
        })
        .collect();
    EventStream::new(width, height, events).unwrap()
}

#[test]
fn binary_and_csv_round_trip_large_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = random_stream(&mut rng, 100_000, 346, 260);
    let bin = write_evt_binary(&s);
    assert_eq!(bin.len(), EVT1_HEADER_LEN + 100_000 * EVT1_RECORD_LEN);
    let from_bin = parse_evt_binary(&bin).unwrap();
    assert_eq!(from_bin, s);
    assert_eq!(write_evt_binary(&from_bin), bin);

    let csv = write_evt_csv(&s);
    let from_csv = parse_evt_csv(&csv, 346, 260).unwrap();
    assert_eq!(from_csv, s);
    assert_eq!(write_evt_csv(&from_csv), csv);
}

#[test]
fn csv_to_binary_to_stream_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = random_stream(&mut rng, 1000, 32, 32);
    let via_csv = parse_evt_csv(&write_evt_csv(&s), 32, 32).unwrap();
    let via_bin = parse_evt_binary(&write_evt_binary(&via_csv)).unwrap();
    assert_eq!(via_bin, s);
}

#[test]
fn csv_and_binary_agree_on_single_event() {
    let csv = parse_evt_csv("5,1,2,1", 4, 4).unwrap();
    let mut bin = b"EVT1".to_vec();
    bin.extend(4u16.to_le_bytes());
    bin.extend(4u16.to_le_bytes());
    bin.extend(1u64.to_le_bytes());
    bin.extend(5u64.to_le_bytes());
    bin.extend(1u16.to_le_bytes());
    bin.extend(2u16.to_le_bytes());
    bin.extend([1, 0]);
    assert_eq!(parse_evt_binary(&bin).unwrap(), csv);
    assert!(parse_evt_csv("5,1,2,0", 4, 4).is_err());
}

#[test]
fn segmentation_matches_hand_binning() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = random_stream(&mut rng, 5000, 8, 8);
    let (t0, t1) = (100u64, 7000u64);
    for steps in [1usize, 7, 10, 15, 16, 20] {
        let segs = segment_events(&s, t0, t1, steps).unwrap();
        let mut counts = vec![0usize; steps];
        for e in s.events() {
            if e.t < t0 || e.t >= t1 {
                continue;
            }
            let mut b = 0;
            // linear search for the last bin whose left edge is <= t
            while b + 1 < steps && (t0 as f64 + (b + 1) as f64 * (t1 - t0) as f64 / steps as f64) <= e.t as f64 {
                b += 1;
            }
            counts[b] += 1;
        }
        assert_eq!(segs.iter().map(Vec::len).collect::<Vec<_>>(), counts, "T = {steps}");
    }
}

#[test]
fn raster_channel_sums_match_polarity_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_stream(&mut rng, 10_000, 16, 12);
    let m = rasterize_segment(s.events(), 16, 12);
    let plane = 16 * 12;
    let on: f64 = m.data()[..plane].iter().sum();
    let off: f64 = m.data()[plane..].iter().sum();
    assert_eq!((on as usize, off as usize), s.polarity_counts());
}

#[test]
fn frame_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let frames = (0..3)
        .map(|k| {
            let rgb = (0..5 * 4 * 3).map(|i| ((i * 13 + k * 40) % 256) as f64 / 255.0).collect();
            Frame::new(5, 4, rgb).unwrap()
        })
        .collect();
    let seq = FrameSequence::new(frames, vec![0, 1000, 2500]).unwrap();
    write_frame_dir(dir.path(), &seq).unwrap();
    assert!(dir.path().join("frames/0002.ppm").exists());
    let back = read_frame_dir(dir.path()).unwrap();
    assert_eq!(back.timestamps(), seq.timestamps());
    for (a, b) in seq.frames().iter().zip(back.frames()) {
        assert!(a.rgb().iter().zip(b.rgb()).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}

fn random_frames(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize) -> FrameSequence {
    let frames = (0..n)
        .map(|_| Frame::new(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect();
    FrameSequence::new(frames, (0..n as u64).map(|k| k * 1000).collect()).unwrap()
}

#[test]
fn dvs_count_monotone_in_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let thresholds = [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.8];
    for _ in 0..50 {
        let seq = random_frames(&mut rng, 6, 6, 5);
        let counts: Vec<usize> = thresholds.iter().map(|&c| simulate_dvs(&seq, c).unwrap().len()).collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
        for &c in &thresholds {
            let half = simulate_dvs(&seq, c / 2.0).unwrap().len();
            assert!(half >= simulate_dvs(&seq, c).unwrap().len());
        }
    }
}

#[test]
fn dvs_polarity_follows_log_change() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let seq = random_frames(&mut rng, 2, 8, 8);
    let s = simulate_dvs(&seq, 0.1).unwrap();
    assert!(!s.is_empty());
    let (a, b) = (&seq.frames()[0], &seq.frames()[1]);
    for e in s.events() {
        let (x, y) = (e.x as usize, e.y as usize);
        let d = b.luminance(x, y).max(1e-3).ln() - a.luminance(x, y).max(1e-3).ln();
        assert_eq!(e.polarity.sign() as f64, d.signum());
        assert!(e.t > 0 && e.t < 1000);
    }
}

proptest! {
    #[test]
    fn segment_and_rasterize_conserve_counts(
        seed in any::<u64>(),
        n in 0usize..400,
        t0 in 0u64..200,
        span in 1u64..2000,
        steps in 1usize..24,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_stream(&mut rng, n, 7, 5);
        let t1 = t0 + span;
        let in_range = s.events().iter().filter(|e| e.t >= t0 && e.t < t1).count();
        let vox = voxelize(&s, t0, t1, steps).unwrap();
        prop_assert_eq!(vox.steps(), steps);
        prop_assert_eq!(vox.total() as usize, in_range);
        prop_assert!(vox.tensor().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn resize_of_constant_is_constant(c in -10.0f64..10.0, h in 1usize..12, w in 1usize..12, oh in 1usize..20, ow in 1usize..20) {
        let m = spikefuse_tensor::Tensor::full(vec![2, h, w], c);
        let r = resize_bilinear(&m, oh, ow);
        prop_assert!(r.data().iter().all(|&v| (v - c).abs() < 1e-12));
    }
}
