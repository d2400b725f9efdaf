use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikefuse_core::energy::{
    energy_report, measure_spike_rate, paper_preset_report, paper_reproduced_rate, parse_layer_specs, EnergyConstants,
    PAPER_INPUT_CHANNELS, PAPER_SPIKE_COUNT, PAPER_STEPS,
};
use spikefuse_core::event_io::{read_frame_dir, simulate_dvs, write_evt_binary, write_evt_csv};
use spikefuse_core::pipeline::checkpoint::Checkpoint;
use spikefuse_core::pipeline::features::dump_maps;
use spikefuse_core::pipeline::gradients::{model_check, operator_checks};
use spikefuse_core::pipeline::metrics::rank;
use spikefuse_core::pipeline::synth::synth_sample;
use spikefuse_core::pipeline::train::evaluate;
use spikefuse_core::pipeline::{
    generate_dataset, load_dataset, load_sample, prepare, Arch, Config, Model, ModelInput, Preset, Sample, SynthConfig,
    Trainer,
};
use spikefuse_core::{Error, Result};

#[derive(Parser)]
#[command(name = "spikefuse", version, about = "Spiking event/frame fusion: training, evaluation and energy profiling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset directory and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Score one sample directory.
    Predict(PredictArgs),
    /// Estimate spiking versus ANN energy.
    ProfileEnergy(EnergyArgs),
    /// Convert a frame directory into DVS events.
    SimulateEvents(SimulateArgs),
    /// Write a synthetic dataset.
    GenData(GenArgs),
    /// Finite-difference gradient checks; exits nonzero on failure.
    Gradcheck(GradArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Tiny,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Tiny => Preset::Tiny,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// `key = value` config file (starts from its `preset`, default tiny).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset to start from when no config file is given.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of frame clips.
    #[arg(long)]
    clips: Option<usize>,
    /// Event time bins (simulation steps).
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    bottleneck_dim: Option<usize>,
    #[arg(long, value_parser = ["if", "lif", "liaf"])]
    neuron: Option<String>,
    #[arg(long, value_parser = ["scnn-mst", "spikeformer-mst", "scnn-only", "mst-only"])]
    arch: Option<String>,
    /// Concatenate pooled event features directly instead of using the
    /// bottleneck block.
    #[arg(long)]
    no_mbf: bool,
}

impl ModelArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::parse(&fs::read_to_string(path)?)?,
            None => Config::preset(self.preset.map_or(Preset::Tiny, Preset::from)),
        };
        if let (Some(p), Some(_)) = (self.preset, &self.config) {
            if Preset::from(p) != cfg.model.preset {
                return Err(Error::Config("--preset disagrees with the config file".into()));
            }
        }
        let overrides = [
            ("train.seed", self.seed.map(|v| v.to_string())),
            ("clips", self.clips.map(|v| v.to_string())),
            ("segments", self.segments.map(|v| v.to_string())),
            ("bottleneck_dim", self.bottleneck_dim.map(|v| v.to_string())),
            ("neuron", self.neuron.clone()),
            ("arch", self.arch.clone()),
            ("mbf", self.no_mbf.then(|| "false".to_string())),
        ];
        for (k, v) in overrides {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Dataset root (with labels.txt).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long, default_value = "model.ckp1")]
    out: PathBuf,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Stop once training top-1 reaches this value.
    #[arg(long)]
    target_accuracy: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Also append the log lines to this file.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the trained model's intermediate maps per sample.
    #[arg(long)]
    dump_features: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Config to compare against the checkpoint's digest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dump_features: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sample directory (events.evt1, frames/, timestamps.txt).
    #[arg(long)]
    sample: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dump_features: Option<PathBuf>,
}

#[derive(Args)]
struct EnergyArgs {
    #[arg(long, value_enum, default_value = "paper")]
    preset: PresetArg,
    /// Layer list, one `kind k c_in c_out h_out w_out spiking` per line.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Spike rate (spikes per spiking-layer op per step).
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Print only `key=value` lines.
    #[arg(long)]
    kv: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EventFormat {
    Evt1,
    Csv,
}

#[derive(Args)]
struct SimulateArgs {
    /// Directory holding frames/NNNN.ppm and timestamps.txt.
    #[arg(long)]
    frames: PathBuf,
    /// Log-intensity contrast threshold.
    #[arg(long, default_value_t = 0.2)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "evt1")]
    format: EventFormat,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "tiny")]
    preset: PresetArg,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct GradArgs {
    /// Coordinates checked per parameter tensor of the full model.
    #[arg(long, default_value_t = 8)]
    coords: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::ProfileEnergy(a) => profile_energy(a),
        Command::SimulateEvents(a) => simulate(a),
        Command::GenData(a) => gen_data(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn prepared(samples: &[Sample], cfg: &Config) -> Result<Vec<(ModelInput, usize)>> {
    samples.iter().map(|s| Ok((prepare(s, &cfg.model)?, s.label))).collect()
}

fn dump(dir: &Path, model: &Model, samples: &[Sample], data: &[(ModelInput, usize)]) -> Result<()> {
    for (s, (x, _)) in samples.iter().zip(data) {
        dump_maps(&dir.join(s.id.replace('/', "_")), &model.feature_maps(x)?)?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = a.model.load()?;
    if let Some(v) = a.max_steps {
        cfg.train.max_steps = v;
    }
    if let Some(v) = a.target_accuracy {
        cfg.train.target_accuracy = Some(v);
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    let (classes, samples) = load_dataset(&a.data)?;
    cfg.set("classes", &classes.len().to_string())?;
    cfg.validate()?;
    let data = prepared(&samples, &cfg)?;
    let mut log = match &a.log {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let mut emit = |line: &str| {
        println!("{line}");
        if let Some(f) = log.as_mut() {
            let _ = writeln!(f, "{line}");
        }
    };
    emit(&format!(
        "arch={} preset={} classes={} samples={} seed={}",
        cfg.model.arch,
        cfg.model.preset,
        classes.len(),
        samples.len(),
        cfg.train.seed
    ));
    let mut trainer = Trainer::new(cfg.clone())?;
    let logs = trainer.fit(&data, |l| emit(&l.key_values()))?;
    let last = logs.last().expect("at least one epoch");
    emit(&format!("final step={} {}", trainer.step, last.metrics.key_values()));
    Checkpoint::capture(&cfg, &trainer.model.store, trainer.step).save(&a.out)?;
    if let Some(dir) = &a.dump_features {
        dump(dir, &trainer.model, &samples, &data)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn restore(checkpoint: &Path, config: Option<&Path>) -> Result<(Config, Model)> {
    let ck = Checkpoint::load(checkpoint)?;
    let stored = Config::parse(&ck.config_text)?;
    let cfg = match config {
        Some(p) => Config::parse(&fs::read_to_string(p)?)?,
        None => stored.clone(),
    };
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    for w in ck.restore(&cfg, &mut model.store)? {
        eprintln!("warning: {w}");
    }
    Ok((cfg, model))
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let (cfg, model) = restore(&a.checkpoint, a.config.as_deref())?;
    let (_, samples) = load_dataset(&a.data)?;
    let data = prepared(&samples, &cfg)?;
    let (metrics, _) = evaluate(&model, &data)?;
    println!("{}", metrics.key_values());
    if let Some(dir) = &a.dump_features {
        dump(dir, &model, &samples, &data)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn predict(a: PredictArgs) -> Result<ExitCode> {
    let (cfg, model) = restore(&a.checkpoint, a.config.as_deref())?;
    let sample = load_sample(&a.sample, 0, "sample")?;
    let input = prepare(&sample, &cfg.model)?;
    let scores = model.predict(&input)?;
    let order = rank(&scores);
    let list: Vec<String> = scores.iter().map(|s| format!("{s:.6}")).collect();
    println!("prediction={} score={:.6} scores={}", order[0], scores[order[0]], list.join(","));
    if let Some(dir) = &a.dump_features {
        dump_maps(dir, &model.feature_maps(&input)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn profile_energy(a: EnergyArgs) -> Result<ExitCode> {
    let preset = Preset::from(a.preset);
    let cfg = Config::preset(preset);
    let constants = EnergyConstants::default();
    let (report, note) = match (preset, &a.spec, a.rate, a.steps) {
        (Preset::Paper, None, None, None) => {
            let rate = paper_reproduced_rate();
            (
                paper_preset_report(),
                format!(
                    "spike_count={PAPER_SPIKE_COUNT}\nreproduced_spike_rate_percent={:.6}\n",
                    rate * 100.0
                ),
            )
        }
        _ => {
            let layers = match &a.spec {
                Some(p) => parse_layer_specs(&fs::read_to_string(p)?)?,
                None => {
                    let c_in = if preset == Preset::Paper { PAPER_INPUT_CHANNELS } else { cfg.model.scnn.input_channels };
                    cfg.model.scnn.layer_specs(c_in)
                }
            };
            let steps = a.steps.unwrap_or(match preset {
                Preset::Paper => PAPER_STEPS,
                Preset::Tiny => cfg.model.scnn.steps as u64,
            });
            let (rate, note) = match (a.rate, preset) {
                (Some(r), _) => (r, String::new()),
                (None, Preset::Paper) => (spikefuse_core::energy::PAPER_SPIKE_RATE, String::new()),
                (None, Preset::Tiny) => {
                    let r = measured_tiny_rate(&cfg)?;
                    (r, format!("measured_spike_rate={r:.10}\n"))
                }
            };
            (energy_report(&layers, steps, rate, constants)?, note)
        }
    };
    if !a.kv {
        print!("{}", report.render_table());
        println!();
    }
    print!("{note}{}", report.key_values());
    Ok(ExitCode::SUCCESS)
}

/// Spike rate of an untrained tiny encoder on a few synthetic samples.
fn measured_tiny_rate(cfg: &Config) -> Result<f64> {
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let synth = SynthConfig::preset(Preset::Tiny);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut inputs = Vec::new();
    for label in 0..synth.classes {
        let (frames, events) = synth_sample(&synth, label, &mut rng)?;
        let s = Sample {
            id: format!("probe{label}"),
            label,
            events,
            frames,
        };
        inputs.push(prepare(&s, &cfg.model)?);
    }
    let tallies = model.spike_tallies(&inputs)?;
    Ok(measure_spike_rate(&tallies, cfg.model.scnn.steps, inputs.len())?.paper_convention)
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let seq = read_frame_dir(&a.frames)?;
    let events = simulate_dvs(&seq, a.threshold)?;
    match a.format {
        EventFormat::Evt1 => fs::write(&a.out, write_evt_binary(&events))?,
        EventFormat::Csv => fs::write(&a.out, write_evt_csv(&events))?,
    }
    let (on, off) = events.polarity_counts();
    println!("frames={} events={} on={on} off={off}", seq.len(), events.len());
    Ok(ExitCode::SUCCESS)
}

fn gen_data(a: GenArgs) -> Result<ExitCode> {
    let mut s = SynthConfig::preset(a.preset.into());
    s.classes = a.classes;
    s.samples_per_class = a.samples_per_class;
    s.seed = a.seed;
    if let Some(c) = a.threshold {
        s.dvs_threshold = c;
    }
    generate_dataset(&a.out, &s)?;
    println!("classes={} samples={} root={}", s.classes, s.classes * s.samples_per_class, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradArgs) -> Result<ExitCode> {
    let mut reports = operator_checks(a.seed)?;
    reports.push(("model".to_string(), model_check(Arch::ScnnMst, a.coords, a.seed)?));
    let mut ok = true;
    for (name, r) in &reports {
        let pass = r.passed();
        ok &= pass;
        println!(
            "check={name} coords={} max_rel_err={:.3e} status={}",
            r.entries.len(),
            r.max_rel_err,
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
