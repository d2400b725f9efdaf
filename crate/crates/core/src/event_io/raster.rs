use spikefuse_tensor::Tensor;

use super::{Event, EventIoError, EventStream, Polarity, Result};

/// Time-binned polarity counts, shape `T × 2 × H × W` (channel 0 ON,
/// channel 1 OFF).
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelizedEvents {
    bins: Tensor,
}

impl VoxelizedEvents {
    pub fn from_tensor(bins: Tensor) -> Result<Self> {
        if bins.ndim() != 4 || bins.shape()[1] != 2 {
            return Err(EventIoError::InvalidArgument(format!(
                "voxel grid must be T×2×H×W, got {:?}",
                bins.shape()
            )));
        }
        Ok(Self { bins })
    }

    pub fn steps(&self) -> usize {
        self.bins.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.bins.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.bins.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.bins
    }

    /// Bin `t` as a `1 × 2 × H × W` batch.
    pub fn step(&self, t: usize) -> Tensor {
        let plane = 2 * self.height() * self.width();
        Tensor::from_vec(
            vec![1, 2, self.height(), self.width()],
            self.bins.data()[t * plane..(t + 1) * plane].to_vec(),
        )
    }

    pub fn total(&self) -> f64 {
        self.bins.sum()
    }

    /// Bilinear resize of every bin to `height × width`.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        Self {
            bins: resize_bilinear(&self.bins, height, width),
        }
    }
}

/// Bin index of timestamp `t` in `[t0, t1)` split into `steps` equal bins.
fn bin_of(t: u64, t0: u64, t1: u64, steps: usize) -> usize {
    let idx = (t - t0) as u128 * steps as u128 / (t1 - t0) as u128;
    (idx as usize).min(steps - 1)
}

fn check_window(t0: u64, t1: u64, steps: usize) -> Result<()> {
    if t0 >= t1 {
        return Err(EventIoError::InvalidArgument(format!("empty time window [{t0}, {t1})")));
    }
    if steps == 0 {
        return Err(EventIoError::InvalidArgument("segment count must be >= 1".into()));
    }
    Ok(())
}

/// Splits the events in `[t0, t1)` into `steps` consecutive segments of
/// equal duration; event `t` lands in `min(⌊(t − t0)·steps/(t1 − t0)⌋, steps − 1)`.
pub fn segment_events(stream: &EventStream, t0: u64, t1: u64, steps: usize) -> Result<Vec<Vec<Event>>> {
    check_window(t0, t1, steps)?;
    let mut segments = vec![Vec::new(); steps];
    for e in stream.events().iter().filter(|e| e.t >= t0 && e.t < t1) {
        segments[bin_of(e.t, t0, t1, steps)].push(*e);
    }
    Ok(segments)
}

/// Per-pixel ON/OFF counts as a `2 × H × W` map.
pub fn rasterize_segment(events: &[Event], width: usize, height: usize) -> Tensor {
    let mut map = Tensor::zeros(vec![2, height, width]);
    let d = map.data_mut();
    for e in events {
        let channel = match e.polarity {
            Polarity::On => 0,
            Polarity::Off => 1,
        };
        d[(channel * height + e.y as usize) * width + e.x as usize] += 1.0;
    }
    map
}

/// Segments and rasterizes a stream at sensor resolution.
pub fn voxelize(stream: &EventStream, t0: u64, t1: u64, steps: usize) -> Result<VoxelizedEvents> {
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let mut data = Vec::with_capacity(steps * 2 * h * w);
    for seg in segment_events(stream, t0, t1, steps)? {
        data.extend(rasterize_segment(&seg, w, h).into_data());
    }
    Ok(VoxelizedEvents {
        bins: Tensor::from_vec(vec![steps, 2, h, w], data),
    })
}

/// Source sample positions and weights for half-pixel-centred resampling.
fn taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of the last two axes (corner alignment off).
pub fn resize_bilinear(map: &Tensor, height: usize, width: usize) -> Tensor {
    let shape = map.shape();
    assert!(shape.len() >= 2 && height >= 1 && width >= 1, "resize needs a 2-D map and targets >= 1");
    let r = shape.len();
    let (ih, iw) = (shape[r - 2], shape[r - 1]);
    let planes = map.numel() / (ih * iw);
    let (ty, tx) = (taps(height, ih), taps(width, iw));
    let mut out_shape = shape.to_vec();
    out_shape[r - 2] = height;
    out_shape[r - 1] = width;
    let mut out = Vec::with_capacity(planes * height * width);
    for plane in map.data().chunks(ih * iw) {
        for &(y0, y1, ly) in &ty {
            for &(x0, x1, lx) in &tx {
                let top = plane[y0 * iw + x0] * (1.0 - lx) + plane[y0 * iw + x1] * lx;
                let bottom = plane[y1 * iw + x0] * (1.0 - lx) + plane[y1 * iw + x1] * lx;
                out.push(top * (1.0 - ly) + bottom * ly);
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(events: Vec<Event>) -> EventStream {
        EventStream::new(2, 2, events).unwrap()
    }

    #[test]
    fn proportional_bins_with_final_clamp() {
        assert_eq!(bin_of(80, 0, 160, 16), 8);
        assert_eq!(bin_of(159, 0, 160, 16), 15);
        assert_eq!(bin_of(0, 0, 160, 16), 0);
        let s = stream(vec![Event::new(80, 0, 0, Polarity::On), Event::new(159, 1, 1, Polarity::Off)]);
        let segs = segment_events(&s, 0, 160, 16).unwrap();
        assert_eq!(segs[8].len(), 1);
        assert_eq!(segs[15].len(), 1);
    }

    #[test]
    fn out_of_window_events_are_dropped() {
        let s = stream(vec![
            Event::new(5, 0, 0, Polarity::On),
            Event::new(10, 0, 0, Polarity::On),
            Event::new(20, 0, 0, Polarity::On),
        ]);
        let segs = segment_events(&s, 10, 20, 2).unwrap();
        assert_eq!(segs.iter().map(Vec::len).sum::<usize>(), 1);
        assert!(segment_events(&s, 10, 10, 2).is_err());
        assert!(segment_events(&s, 0, 10, 0).is_err());
    }

    #[test]
    fn rasterize_direct_count() {
        let events = [
            Event::new(1, 0, 0, Polarity::On),
            Event::new(2, 0, 0, Polarity::On),
            Event::new(3, 1, 0, Polarity::Off),
        ];
        let m = rasterize_segment(&events, 2, 2);
        assert_eq!(m.data(), &[2., 0., 0., 0., 0., 1., 0., 0.]);
        assert_eq!(rasterize_segment(&[], 2, 2), Tensor::zeros(vec![2, 2, 2]));
    }

    #[test]
    fn resize_preserves_constants() {
        let m = Tensor::full(vec![2, 5, 7], 5.0);
        for (h, w) in [(1, 1), (3, 9), (10, 14)] {
            let r = resize_bilinear(&m, h, w);
            assert!(r.data().iter().all(|&v| (v - 5.0).abs() < 1e-12));
            let back = resize_bilinear(&r, 5, 7);
            assert!(back.data().iter().all(|&v| (v - 5.0).abs() < 1e-12));
        }
    }

    #[test]
    fn resize_identity_2x2_to_4x4_closed_form() {
        let m = Tensor::from_vec(vec![2, 2], vec![1., 0., 0., 1.]);
        let r = resize_bilinear(&m, 4, 4);
        // Half-pixel centres: output i samples source (i + 0.5)/2 - 0.5,
        // clamped at 0, i.e. positions 0, 0.25, 0.75, 1 with weights toward
        // the second pixel of 0, 0.25, 0.75, 1.
        let w = [0.0, 0.25, 0.75, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = (w[i], w[j]);
                let expect = (1.0 - a) * (1.0 - b) + a * b;
                assert!((r.at(&[i, j]) - expect).abs() < 1e-12, "({i},{j})");
            }
        }
    }
}
