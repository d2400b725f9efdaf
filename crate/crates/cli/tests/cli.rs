use std::fs;
use std::process::{Command, Output};

fn spikefuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikefuse")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn unknown_flags_print_usage() {
    for args in [&["train", "--frobnicate"][..], &["profile-energy", "--preset", "huge"], &["nonsense"]] {
        let o = spikefuse(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("Usage") || err.contains("--help"), "{args:?}: {err}");
    }
}

#[test]
fn bad_config_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "preset = tiny\nscnn.wings = 2\n").unwrap();
    let data = dir.path().join("data");
    assert!(spikefuse(&["gen-data", "--samples-per-class", "1", "--out", data.to_str().unwrap()]).status.success());
    let o = spikefuse(&["train", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let data = p("data");
    assert!(spikefuse(&["gen-data", "--samples-per-class", "2", "--seed", "4", "--out", &data]).status.success());
    let o = spikefuse(&[
        "train", "--data", &data, "--out", &p("m.ckp1"), "--max-steps", "3", "--segments", "10", "--neuron", "liaf", "--no-mbf",
        "--log", &p("train.log"), "--dump-features", &p("feat"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("epoch=1 step=1 loss=")), "{text}");
    assert!(text.lines().last().unwrap().starts_with("final step=3 "));
    assert_eq!(fs::read_to_string(p("train.log")).unwrap(), text);
    assert!(dir.path().join("feat/class_01_sample_001/scnn_pooled.npy").exists());

    let o = spikefuse(&["eval", "--checkpoint", &p("m.ckp1"), "--data", &data]);
    assert!(o.status.success());
    let final_line = text.lines().last().unwrap().trim_start_matches("final step=3 ").to_string();
    assert_eq!(stdout(&o).trim(), final_line);

    let o = spikefuse(&["predict", "--checkpoint", &p("m.ckp1"), "--sample", &format!("{data}/class_00/sample_000")]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("prediction="));

    // a config that disagrees with the checkpoint only warns when shapes agree
    fs::write(p("other.cfg"), "preset = tiny\nmbf = false\nsegments = 10\nneuron = liaf\nneuron.threshold = 0.8\n").unwrap();
    let o = spikefuse(&["eval", "--checkpoint", &p("m.ckp1"), "--data", &data, "--config", &p("other.cfg")]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning: checkpoint config digest"));

    fs::write(p("wide.cfg"), "preset = tiny\nclasses = 3\nmbf = false\nsegments = 10\n").unwrap();
    let o = spikefuse(&["eval", "--checkpoint", &p("m.ckp1"), "--data", &data, "--config", &p("wide.cfg")]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("head.fc2"));
}

#[test]
fn simulate_events_writes_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(spikefuse(&["gen-data", "--samples-per-class", "1", "--out", data.to_str().unwrap()]).status.success());
    let sample = data.join("class_01/sample_000");
    for (fmt, name) in [("evt1", "e.evt1"), ("csv", "e.csv")] {
        let out = dir.path().join(name);
        let o = spikefuse(&["simulate-events", "--frames", sample.to_str().unwrap(), "--format", fmt, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        assert!(stdout(&o).contains("frames=16"));
    }
    // same frames and threshold as generation
    assert_eq!(fs::read(dir.path().join("e.evt1")).unwrap(), fs::read(sample.join("events.evt1")).unwrap());
}

#[test]
fn profile_energy_accepts_a_layer_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("layers.txt");
    fs::write(&spec, "conv 3 2 4 8 8 yes\ndeconv 4 4 2 16 16 no\n").unwrap();
    let o = spikefuse(&["profile-energy", "--spec", spec.to_str().unwrap(), "--rate", "0.5", "--steps", "2", "--kv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    // 9·2·4·64 and 16·4·2·256
    assert!(text.contains("spiking_ops=4608\n"), "{text}");
    assert!(text.contains("nonspiking_ops=32768\n"), "{text}");
    assert!(!text.contains("kind"));
}
