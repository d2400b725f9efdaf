//! Synthetic event/frame dataset: each class is a glyph moving along its
//! own direction at its own speed, bouncing off the borders.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Preset;
use super::data::{EVENTS_FILE, LABELS_FILE};
use crate::error::{config_err, Result};
use crate::event_io::{simulate_dvs, write_evt_binary, write_frame_dir, EventStream, Frame, FrameSequence};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub frame_interval_us: u64,
    pub dvs_threshold: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn preset(preset: Preset) -> Self {
        let (width, height) = match preset {
            Preset::Tiny => (32, 32),
            Preset::Paper => (346, 260),
        };
        Self {
            classes: 2,
            samples_per_class: 10,
            width,
            height,
            frames: 16,
            frame_interval_us: 10_000,
            dvs_threshold: 0.2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.samples_per_class == 0 || self.frames < 2 {
            return config_err("need >= 2 classes, >= 1 sample per class and >= 2 frames");
        }
        if self.width < 8 || self.height < 8 || self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return config_err("frame extents must lie in [8, 65535]");
        }
        if self.frame_interval_us == 0 || !(self.dvs_threshold > 0.0) {
            return config_err("frame interval and contrast threshold must be positive");
        }
        Ok(())
    }
}

pub fn class_name(k: usize) -> String {
    format!("class_{k:02}")
}

/// Glyph membership in unit coordinates `u, v ∈ [-1, 1]`.
fn glyph(shape: usize, u: f64, v: f64) -> bool {
    let (au, av) = (u.abs(), v.abs());
    match shape % 8 {
        0 => au <= 0.8 && av <= 0.8,
        1 => (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0),
        2 => (0.55..=1.0).contains(&(u * u + v * v).sqrt()),
        3 => au + av <= 1.0,
        4 => au <= 1.0 && av <= 0.4,
        5 => (u - v).abs() <= 0.4 || (u + v).abs() <= 0.4,
        6 => (-1.0..=0.8).contains(&v) && au <= (v + 1.0) * 0.5,
        _ => u * u + v * v <= 1.0,
    }
}

struct Motion {
    pos: (f64, f64),
    vel: (f64, f64),
    radius: f64,
    angle: f64,
    color: [f64; 3],
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

fn render(cfg: &SynthConfig, class: usize, m: &Motion, k: usize) -> Frame {
    const SS: usize = 3;
    let (w, h) = (cfg.width, cfg.height);
    let r = m.radius;
    let cx = reflect(m.pos.0 + m.vel.0 * k as f64, r, w as f64 - r);
    let cy = reflect(m.pos.1 + m.vel.1 * k as f64, r, h as f64 - r);
    let (sin, cos) = m.angle.sin_cos();
    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let mut cover = 0usize;
            for sy in 0..SS {
                for sx in 0..SS {
                    let px = x as f64 + (sx as f64 + 0.5) / SS as f64 - cx;
                    let py = y as f64 + (sy as f64 + 0.5) / SS as f64 - cy;
                    let (u, v) = ((cos * px + sin * py) / r, (-sin * px + cos * py) / r);
                    cover += glyph(class, u, v) as usize;
                }
            }
            let a = cover as f64 / (SS * SS) as f64;
            let bg = 0.12 + 0.06 * (x as f64 / w as f64) + 0.04 * (y as f64 / h as f64);
            for c in m.color {
                let v = bg * (1.0 - a) + c * a;
                rgb.push((v * 255.0).round() / 255.0);
            }
        }
    }
    Frame::new(w, h, rgb).expect("extents match")
}

/// Frames and simulated events for one sample.
pub fn synth_sample(cfg: &SynthConfig, class: usize, rng: &mut ChaCha8Rng) -> Result<(FrameSequence, EventStream)> {
    let scale = cfg.width.min(cfg.height) as f64;
    let radius = 0.18 * scale;
    let heading = 2.0 * PI * class as f64 / cfg.classes as f64 + rng.random_range(-0.15..0.15);
    let speed = (0.6 + 0.5 * class as f64) * scale / 32.0 * rng.random_range(0.9..1.1);
    let pos = (
        rng.random_range(radius..cfg.width as f64 - radius),
        rng.random_range(radius..cfg.height as f64 - radius),
    );
    let hue = class as f64 / cfg.classes as f64;
    let bright = rng.random_range(0.75..0.95);
    let color = [0.0, 1.0 / 3.0, 2.0 / 3.0].map(|o| bright * (0.6 + 0.4 * (2.0 * PI * (hue + o)).cos().abs()));
    let motion = Motion {
        pos,
        vel: (speed * heading.cos(), speed * heading.sin()),
        radius,
        angle: rng.random_range(-0.3..0.3),
        color,
    };
    let frames: Vec<Frame> = (0..cfg.frames).map(|k| render(cfg, class, &motion, k)).collect();
    let stamps = (0..cfg.frames as u64).map(|k| k * cfg.frame_interval_us).collect();
    let seq = FrameSequence::new(frames, stamps)?;
    let events = simulate_dvs(&seq, cfg.dvs_threshold)?;
    Ok((seq, events))
}

/// Writes the full dataset under `root`. The same config always produces the
/// same bytes.
pub fn generate_dataset(root: &Path, cfg: &SynthConfig) -> Result<()> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fs::create_dir_all(root)?;
    let labels: String = (0..cfg.classes).map(|k| format!("{k} {}\n", class_name(k))).collect();
    fs::write(root.join(LABELS_FILE), labels)?;
    for class in 0..cfg.classes {
        for s in 0..cfg.samples_per_class {
            let dir = root.join(class_name(class)).join(format!("sample_{s:03}"));
            let (seq, events) = synth_sample(cfg, class, &mut rng)?;
            write_frame_dir(&dir, &seq)?;
            fs::write(dir.join(EVENTS_FILE), write_evt_binary(&events))?;
        }
    }
    Ok(())
}
