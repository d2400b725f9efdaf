//! Flat `key = value` configuration. Keys are grouped by prefix
//! (`scnn.`, `mst.`, `mbf.`, `tokens.`, `head.`, `train.`, `data.`); a file
//! starts from the preset named by its `preset` key and applies the other
//! keys on top in order.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{config_err, Error, Result};
use crate::fusion::{MbfConfig, SpikeTokenConfig};
use crate::mst::MstConfig;
use crate::neurons::{NeuronConfig, NeuronKind};
use crate::scnn::ScnnConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    ScnnMst,
    SpikeformerMst,
    ScnnOnly,
    MstOnly,
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scnn-mst" => Ok(Self::ScnnMst),
            "spikeformer-mst" => Ok(Self::SpikeformerMst),
            "scnn-only" => Ok(Self::ScnnOnly),
            "mst-only" => Ok(Self::MstOnly),
            other => config_err(format!(
                "unknown arch {other:?} (expected scnn-mst, spikeformer-mst, scnn-only or mst-only)"
            )),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ScnnMst => "scnn-mst",
            Self::SpikeformerMst => "spikeformer-mst",
            Self::ScnnOnly => "scnn-only",
            Self::MstOnly => "mst-only",
        })
    }
}

impl Arch {
    pub fn uses_scnn(self) -> bool {
        matches!(self, Self::ScnnMst | Self::ScnnOnly)
    }

    pub fn uses_mst(self) -> bool {
        !matches!(self, Self::ScnnOnly)
    }

    pub fn uses_tokens(self) -> bool {
        self == Self::SpikeformerMst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Paper,
    Tiny,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "tiny" => Ok(Self::Tiny),
            other => config_err(format!("unknown preset {other:?} (expected paper or tiny)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Paper => "paper",
            Self::Tiny => "tiny",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub preset: Preset,
    pub arch: Arch,
    pub num_classes: usize,
    /// Route event features through the bottleneck block (scnn-mst only).
    pub use_mbf: bool,
    pub scnn: ScnnConfig,
    pub mst: MstConfig,
    pub mbf: MbfConfig,
    pub tokens: SpikeTokenConfig,
    pub head_hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Stop once training top-1 reaches this value (checked after each epoch).
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4,
            max_steps: 500,
            target_accuracy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub dvs_threshold: f64,
    pub frame_interval_us: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dvs_threshold: 0.2,
            frame_interval_us: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = match preset {
            Preset::Paper => Self {
                preset,
                arch: Arch::ScnnMst,
                num_classes: 114,
                use_mbf: true,
                scnn: ScnnConfig::paper(),
                mst: MstConfig::paper(),
                mbf: MbfConfig::paper(),
                tokens: SpikeTokenConfig::paper(),
                head_hidden: 4096,
            },
            Preset::Tiny => Self {
                preset,
                arch: Arch::ScnnMst,
                num_classes: 2,
                use_mbf: true,
                scnn: ScnnConfig::tiny(),
                mst: MstConfig::tiny(),
                mbf: MbfConfig::tiny(),
                tokens: SpikeTokenConfig::tiny(),
                head_hidden: 128,
            },
        };
        cfg.sync();
        cfg
    }

    /// Copies shared settings into the sub-configs that depend on them.
    pub fn sync(&mut self) {
        self.mbf.in_channels = self.scnn.out_channels;
        if let Ok([_, h, w]) = self.scnn.fused_shape() {
            self.mbf.height = h;
            self.mbf.width = w;
        }
        self.tokens.steps = self.scnn.steps;
        self.tokens.neuron = self.scnn.neuron;
        self.tokens.input_channels = self.scnn.input_channels;
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return config_err("need at least 2 classes");
        }
        if self.head_hidden == 0 {
            return config_err("head.hidden must be >= 1");
        }
        self.scnn.validate()?;
        self.mst.validate()?;
        self.mbf.validate()?;
        self.tokens.validate()?;
        if self.mbf.in_channels != self.scnn.out_channels || self.scnn.fused_shape()? != [self.mbf.in_channels, self.mbf.height, self.mbf.width] {
            return config_err("bottleneck block extents do not match the encoder output");
        }
        Ok(())
    }

    /// `(C, H, W)` the event input is resampled to.
    pub fn event_extent(&self) -> (usize, usize, usize) {
        match self.arch {
            Arch::SpikeformerMst => (self.tokens.input_channels, self.tokens.height, self.tokens.width),
            _ => (self.scnn.input_channels, self.scnn.input_height, self.scnn.input_width),
        }
    }

    /// Length of the event part of the classifier input.
    pub fn event_feature_len(&self) -> usize {
        match self.arch {
            Arch::MstOnly => 0,
            Arch::SpikeformerMst => self.tokens.dim(),
            Arch::ScnnMst if self.use_mbf => self.mbf.event_len(),
            Arch::ScnnMst | Arch::ScnnOnly => self.scnn.out_channels * self.mbf.pool_size * self.mbf.pool_size,
        }
    }

    pub fn head_input_len(&self) -> usize {
        self.event_feature_len() + if self.arch.uses_mst() { self.mst.output_dim } else { 0 }
    }

    /// Canonical text of every setting that shapes the model.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("preset", self.preset.to_string());
        kv("arch", self.arch.to_string());
        kv("classes", self.num_classes.to_string());
        kv("mbf", self.use_mbf.to_string());
        let n = &self.scnn.neuron;
        kv("neuron", n.kind.to_string());
        kv("neuron.threshold", n.threshold.to_string());
        kv("neuron.leak", n.leak.to_string());
        kv("neuron.surrogate_width", n.surrogate_width.to_string());
        kv("segments", self.scnn.steps.to_string());
        kv("scnn.input_channels", self.scnn.input_channels.to_string());
        kv("scnn.input_size", format!("{}x{}", self.scnn.input_height, self.scnn.input_width));
        kv("scnn.channels", list(&self.scnn.channels));
        kv("scnn.pool_after", list(&self.scnn.pool_after));
        kv("scnn.decoder", list(&self.scnn.decoder));
        kv("scnn.out_channels", self.scnn.out_channels.to_string());
        kv("scnn.init_gain", self.scnn.init_gain.to_string());
        kv("mst.frames", self.mst.frames.to_string());
        kv("clips", self.mst.clips.to_string());
        kv("mst.dim", self.mst.dim.to_string());
        kv("mst.frame_size", format!("{}x{}", self.mst.frame_height, self.mst.frame_width));
        kv("mst.stem_channels", list(&self.mst.stem_channels));
        kv("mst.output_dim", self.mst.output_dim.to_string());
        kv("bottleneck_dim", self.mbf.bottleneck.to_string());
        kv("mbf.groups", self.mbf.groups.to_string());
        kv("mbf.pool_size", self.mbf.pool_size.to_string());
        kv("tokens.input_size", format!("{}x{}", self.tokens.height, self.tokens.width));
        kv("tokens.stem_channels", list(&self.tokens.stem_channels));
        kv("tokens.bottleneck_tokens", self.tokens.bottleneck_tokens.to_string());
        kv("tokens.blocks", self.tokens.ann_blocks.to_string());
        kv("tokens.mlp_ratio", self.tokens.mlp_ratio.to_string());
        kv("head.hidden", self.head_hidden.to_string());
        s
    }

    /// SHA-256 of [`ModelConfig::to_text`].
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

fn parse_array<const N: usize>(key: &str, v: &str) -> Result<[usize; N]> {
    let l = parse_list(key, v)?;
    l.try_into()
        .map_err(|l: Vec<usize>| Error::Config(format!("{key}: expected {N} values, got {}", l.len())))
}

fn parse_size(key: &str, v: &str) -> Result<(usize, usize)> {
    match v.split_once('x') {
        Some((h, w)) => Ok((parse_num(key, h.trim())?, parse_num(key, w.trim())?)),
        None => {
            let e = parse_num(key, v)?;
            Ok((e, e))
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => config_err(format!("{key}: expected a boolean, got {v:?}")),
    }
}

impl Config {
    pub fn preset(preset: Preset) -> Self {
        Self {
            model: ModelConfig::preset(preset),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "preset" => {
                let p: Preset = v.parse()?;
                if p != m.preset {
                    return config_err("`preset` must be the first setting");
                }
            }
            "arch" => m.arch = v.parse()?,
            "classes" => m.num_classes = parse_num(key, v)?,
            "mbf" => m.use_mbf = parse_bool(key, v)?,
            "neuron" => {
                let kind: NeuronKind = v.parse()?;
                let keep = m.scnn.neuron;
                m.scnn.neuron = NeuronConfig {
                    threshold: keep.threshold,
                    surrogate_width: keep.surrogate_width,
                    ..NeuronConfig::new(kind)
                };
            }
            "neuron.threshold" => m.scnn.neuron.threshold = parse_num(key, v)?,
            "neuron.leak" => m.scnn.neuron.leak = parse_num(key, v)?,
            "neuron.surrogate_width" => m.scnn.neuron.surrogate_width = parse_num(key, v)?,
            "segments" => m.scnn.steps = parse_num(key, v)?,
            "scnn.input_channels" => m.scnn.input_channels = parse_num(key, v)?,
            "scnn.input_size" => (m.scnn.input_height, m.scnn.input_width) = parse_size(key, v)?,
            "scnn.channels" => m.scnn.channels = parse_array(key, v)?,
            "scnn.pool_after" => m.scnn.pool_after = parse_list(key, v)?,
            "scnn.decoder" => m.scnn.decoder = parse_array(key, v)?,
            "scnn.out_channels" => m.scnn.out_channels = parse_num(key, v)?,
            "scnn.init_gain" => m.scnn.init_gain = parse_num(key, v)?,
            "mst.frames" => m.mst.frames = parse_num(key, v)?,
            "clips" => m.mst.clips = parse_num(key, v)?,
            "mst.dim" => m.mst.dim = parse_num(key, v)?,
            "mst.frame_size" => (m.mst.frame_height, m.mst.frame_width) = parse_size(key, v)?,
            "mst.stem_channels" => m.mst.stem_channels = parse_array(key, v)?,
            "mst.output_dim" => m.mst.output_dim = parse_num(key, v)?,
            "bottleneck_dim" => m.mbf.bottleneck = parse_num(key, v)?,
            "mbf.groups" => m.mbf.groups = parse_num(key, v)?,
            "mbf.pool_size" => m.mbf.pool_size = parse_num(key, v)?,
            "tokens.input_size" => (m.tokens.height, m.tokens.width) = parse_size(key, v)?,
            "tokens.stem_channels" => m.tokens.stem_channels = parse_list(key, v)?,
            "tokens.bottleneck_tokens" => m.tokens.bottleneck_tokens = parse_num(key, v)?,
            "tokens.blocks" => m.tokens.ann_blocks = parse_num(key, v)?,
            "tokens.mlp_ratio" => m.tokens.mlp_ratio = parse_num(key, v)?,
            "head.hidden" => m.head_hidden = parse_num(key, v)?,
            "train.seed" | "seed" => self.train.seed = parse_num(key, v)?,
            "train.lr" => self.train.lr = parse_num(key, v)?,
            "train.beta1" => self.train.beta1 = parse_num(key, v)?,
            "train.beta2" => self.train.beta2 = parse_num(key, v)?,
            "train.eps" => self.train.eps = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.max_steps" => self.train.max_steps = parse_num(key, v)?,
            "train.target_accuracy" => {
                self.train.target_accuracy = if v == "none" { None } else { Some(parse_num(key, v)?) }
            }
            "data.dvs_threshold" => self.data.dvs_threshold = parse_num(key, v)?,
            "data.frame_interval_us" => self.data.frame_interval_us = parse_num(key, v)?,
            other => return config_err(format!("unknown key {other:?}")),
        }
        self.model.sync();
        Ok(())
    }

    /// Parses config text; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return config_err(format!("line {}: expected `key = value`", i + 1));
            };
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let preset = match entries.iter().position(|(_, k, _)| k == "preset") {
            Some(0) => entries[0].2.parse()?,
            Some(i) => return config_err(format!("line {}: `preset` must be the first setting", entries[i].0)),
            None => Preset::Tiny,
        };
        let mut cfg = Self::preset(preset);
        for (line, k, v) in entries {
            cfg.set(&k, &v).map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if !(t.lr > 0.0) || t.batch_size == 0 {
            return config_err("train.lr must be > 0 and train.batch_size >= 1");
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            return config_err("Adam betas must lie in [0, 1) and eps be > 0");
        }
        if !(self.data.dvs_threshold > 0.0) || self.data.frame_interval_us == 0 {
            return config_err("data.dvs_threshold and data.frame_interval_us must be positive");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = self.model.to_text();
        let t = &self.train;
        writeln!(s, "train.seed = {}", t.seed).unwrap();
        writeln!(s, "train.lr = {}", t.lr).unwrap();
        writeln!(s, "train.beta1 = {}", t.beta1).unwrap();
        writeln!(s, "train.beta2 = {}", t.beta2).unwrap();
        writeln!(s, "train.eps = {}", t.eps).unwrap();
        writeln!(s, "train.batch_size = {}", t.batch_size).unwrap();
        writeln!(s, "train.max_steps = {}", t.max_steps).unwrap();
        let target = t.target_accuracy.map_or("none".to_string(), |v| v.to_string());
        writeln!(s, "train.target_accuracy = {target}").unwrap();
        writeln!(s, "data.dvs_threshold = {}", self.data.dvs_threshold).unwrap();
        writeln!(s, "data.frame_interval_us = {}", self.data.frame_interval_us).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for p in [Preset::Tiny, Preset::Paper] {
            let mut c = Config::preset(p);
            c.set("neuron", "liaf").unwrap();
            c.set("clips", "8").unwrap();
            c.set("train.target_accuracy", "0.95").unwrap();
            let back = Config::parse(&c.to_text()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn derived_lengths() {
        let paper = ModelConfig::preset(Preset::Paper);
        assert_eq!(paper.head_input_len(), 7232);
        let mut tiny = ModelConfig::preset(Preset::Tiny);
        assert_eq!(tiny.head_input_len(), 16 * 2 * 2 + 128);
        tiny.arch = Arch::MstOnly;
        assert_eq!(tiny.head_input_len(), 128);
    }

    #[test]
    fn errors_name_the_line() {
        let e = Config::parse("arch = scnn-mst\nclips = many\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        assert!(Config::parse("bogus = 1").is_err());
        assert!(Config::parse("clips = 3").is_err());
        assert!(Config::parse("arch = scnn-mst\npreset = paper").is_err());
    }

    #[test]
    fn neuron_switch_sets_leak() {
        let mut c = Config::preset(Preset::Tiny);
        c.set("neuron", "if").unwrap();
        assert_eq!(c.model.scnn.neuron.leak, 1.0);
        c.set("neuron", "lif").unwrap();
        assert_eq!(c.model.scnn.neuron.leak, 0.5);
        assert_eq!(c.model.tokens.neuron.kind, NeuronKind::Lif);
    }
}
