//! Dataset layout on disk and per-sample preprocessing.
//!
//! ```text
//! <root>/labels.txt                      "<index> <class name>" per line
//! <root>/<class>/<sample>/events.evt1
//! <root>/<class>/<sample>/frames/NNNN.ppm
//! <root>/<class>/<sample>/timestamps.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use spikefuse_tensor::Tensor;

use super::config::ModelConfig;
use super::model::ModelInput;
use crate::error::{Error, Result};
use crate::event_io::{parse_evt_binary, read_frame_dir, resize_bilinear, voxelize, EventStream, Frame, FrameSequence};

pub const LABELS_FILE: &str = "labels.txt";
pub const EVENTS_FILE: &str = "events.evt1";

#[derive(Clone, Debug)]
pub struct Sample {
    /// `<class>/<sample>`.
    pub id: String,
    pub label: usize,
    pub events: EventStream,
    pub frames: FrameSequence,
}

pub fn load_sample(dir: &Path, label: usize, id: impl Into<String>) -> Result<Sample> {
    let events = parse_evt_binary(&fs::read(dir.join(EVENTS_FILE))?)?;
    let frames = read_frame_dir(dir)?;
    if frames.is_empty() {
        return Err(Error::Dataset(format!("{}: no frames", dir.display())));
    }
    Ok(Sample {
        id: id.into(),
        label,
        events,
        frames,
    })
}

/// Class names in index order.
pub fn read_labels(root: &Path) -> Result<Vec<String>> {
    let path = root.join(LABELS_FILE);
    let text = fs::read_to_string(&path)?;
    let mut names = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::Dataset(format!("{} line {}: expected `<index> <name>`", path.display(), i + 1));
        let (idx, name) = line.trim().split_once(char::is_whitespace).ok_or_else(bad)?;
        if idx.parse::<usize>().map_err(|_| bad())? != names.len() {
            return Err(Error::Dataset(format!("{} line {}: indices must count up from 0", path.display(), i + 1)));
        }
        names.push(name.trim().to_string());
    }
    if names.is_empty() {
        return Err(Error::Dataset(format!("{}: no classes", path.display())));
    }
    Ok(names)
}

/// Class names plus every sample, ordered by class then sample directory name.
pub fn load_dataset(root: &Path) -> Result<(Vec<String>, Vec<Sample>)> {
    let classes = read_labels(root)?;
    let mut samples = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        let class_dir = root.join(class);
        let mut dirs: Vec<PathBuf> = fs::read_dir(&class_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for d in dirs {
            let name = d.file_name().expect("read_dir entry").to_string_lossy();
            samples.push(load_sample(&d, label, format!("{class}/{name}"))?);
        }
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{}: no samples", root.display())));
    }
    Ok((classes, samples))
}

/// `n` indices spread evenly over `0..len` (first and last included).
pub fn resample_indices(len: usize, n: usize) -> Vec<usize> {
    if n == 1 || len == 1 {
        return vec![0; n];
    }
    (0..n)
        .map(|k| ((k * (len - 1)) as f64 / (n - 1) as f64).round() as usize)
        .collect()
}

fn frame_tensor(frame: &Frame) -> Tensor {
    let (w, h) = (frame.width(), frame.height());
    let rgb = frame.rgb();
    Tensor::from_fn(vec![3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        rgb[p * 3 + c]
    })
}

/// Voxelizes the events into the configured number of bins and resamples
/// both modalities to the model extents.
pub fn prepare(sample: &Sample, cfg: &ModelConfig) -> Result<ModelInput> {
    let (c, h, w) = cfg.event_extent();
    if c != 2 {
        return Err(Error::Config(format!("event input has 2 polarity channels, model expects {c}")));
    }
    let stamps = sample.frames.timestamps();
    let events = sample.events.events();
    let mut t0 = stamps[0];
    let mut t1 = stamps[stamps.len() - 1];
    if let (Some(first), Some(last)) = (events.first(), events.last()) {
        t0 = t0.min(first.t);
        t1 = t1.max(last.t + 1);
    }
    let t1 = t1.max(t0 + 1);
    let vox = voxelize(&sample.events, t0, t1, cfg.scnn.steps)?;
    let vox = if (vox.height(), vox.width()) == (h, w) { vox } else { vox.resized(h, w) };

    let m = &cfg.mst;
    let frames = sample.frames.frames();
    let mut data = Vec::with_capacity(m.frames * 3 * m.frame_height * m.frame_width);
    for i in resample_indices(frames.len(), m.frames) {
        let t = frame_tensor(&frames[i]);
        let t = if (frames[i].height(), frames[i].width()) == (m.frame_height, m.frame_width) {
            t
        } else {
            resize_bilinear(&t, m.frame_height, m.frame_width)
        };
        data.extend_from_slice(t.data());
    }
    Ok(ModelInput {
        voxels: vox.tensor().clone(),
        frames: Tensor::from_vec(vec![m.frames, 3, m.frame_height, m.frame_width], data),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampling_spreads_indices() {
        assert_eq!(resample_indices(16, 16), (0..16).collect::<Vec<_>>());
        assert_eq!(resample_indices(5, 3), vec![0, 2, 4]);
        assert_eq!(resample_indices(4, 7), vec![0, 1, 1, 2, 2, 3, 3]);
        assert_eq!(resample_indices(9, 1), vec![0]);
    }

    #[test]
    fn frame_planes_are_channel_major() {
        let f = Frame::new(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(frame_tensor(&f).data(), &[0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }
}
