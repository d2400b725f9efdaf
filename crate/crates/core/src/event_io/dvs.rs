use super::{Event, EventIoError, EventStream, FrameSequence, Polarity, Result};

/// Luminance floor applied before taking logarithms.
pub const LUMINANCE_FLOOR: f64 = 1e-3;

fn log_luminance(seq: &FrameSequence, k: usize) -> Vec<f64> {
    let f = &seq.frames()[k];
    f.rgb()
        .chunks_exact(3)
        .map(|p| ((p[0] + p[1] + p[2]) / 3.0).max(LUMINANCE_FLOOR).ln())
        .collect()
}

/// Log-intensity threshold event simulator.
///
/// Every pixel keeps a log-luminance reference initialised from the first
/// frame. For each consecutive frame pair it fires
/// `n = ⌊|ln L − ref| / C⌋` events of the sign of the change, spaced evenly
/// inside the inter-frame interval, and moves the reference by `n·C`.
pub fn simulate_dvs(seq: &FrameSequence, threshold: f64) -> Result<EventStream> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(EventIoError::InvalidArgument(format!(
            "contrast threshold must be positive, got {threshold}"
        )));
    }
    if seq.len() < 2 {
        return Err(EventIoError::InvalidArgument(format!(
            "need at least 2 frames, got {}",
            seq.len()
        )));
    }
    let (width, height) = seq.extent().expect("non-empty sequence");
    let (w16, h16) = match (u16::try_from(width), u16::try_from(height)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => {
            return Err(EventIoError::InvalidArgument(format!(
                "frame extent {width}×{height} exceeds the event coordinate range"
            )))
        }
    };

    let stamps = seq.timestamps();
    let mut reference = log_luminance(seq, 0);
    let mut events = Vec::new();
    for k in 1..seq.len() {
        let current = log_luminance(seq, k);
        let (ta, dt) = (stamps[k - 1], stamps[k] - stamps[k - 1]);
        let mut pair = Vec::new();
        for (i, (r, &l)) in reference.iter_mut().zip(&current).enumerate() {
            let delta = l - *r;
            let n = (delta.abs() / threshold).floor() as u64;
            if n == 0 {
                continue;
            }
            let polarity = if delta > 0.0 { Polarity::On } else { Polarity::Off };
            let (x, y) = ((i % width) as u16, (i / width) as u16);
            for j in 1..=n {
                let t = ta + (j as u128 * dt as u128 / (n as u128 + 1)) as u64;
                pair.push(Event::new(t, x, y, polarity));
            }
            *r += n as f64 * threshold * delta.signum();
        }
        pair.sort_by_key(|e| e.t);
        events.extend(pair);
    }
    EventStream::new(w16, h16, events)
}

#[cfg(test)]
mod tests {
    use super::super::Frame;
    use super::*;

    fn grey(v: f64) -> Frame {
        Frame::filled(1, 1, v).unwrap()
    }

    #[test]
    fn brightening_pixel_fires_two_on_events() {
        let seq = FrameSequence::new(vec![grey(100.0 / 255.0), grey(150.0 / 255.0)], vec![0, 300]).unwrap();
        let s = simulate_dvs(&seq, 0.2).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.events().iter().all(|e| e.polarity == Polarity::On));
        assert_eq!(s.events().iter().map(|e| e.t).collect::<Vec<_>>(), vec![100, 200]);
    }

    #[test]
    fn reference_carries_residual() {
        // ln-steps of 0.15 at C = 0.2: no event, then one event (0.3), then
        // residual 0.1 + 0.15 = 0.25 gives another.
        let lum = |s: f64| (0.1f64 * s.exp()).min(1.0);
        let frames = (0..4).map(|k| grey(lum(0.15 * k as f64))).collect();
        let seq = FrameSequence::new(frames, vec![0, 10, 20, 30]).unwrap();
        let s = simulate_dvs(&seq, 0.2).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn static_and_invalid() {
        let seq = FrameSequence::new(vec![grey(0.4); 3], vec![0, 1, 2]).unwrap();
        assert!(simulate_dvs(&seq, 0.1).unwrap().is_empty());
        assert!(simulate_dvs(&seq, 0.0).is_err());
        assert!(simulate_dvs(&seq, -1.0).is_err());
        let single = FrameSequence::new(vec![grey(0.4)], vec![0]).unwrap();
        assert!(simulate_dvs(&single, 0.1).is_err());
    }

    #[test]
    fn black_pixels_are_floored() {
        let seq = FrameSequence::new(vec![grey(0.0), grey(1.0)], vec![0, 100]).unwrap();
        let s = simulate_dvs(&seq, 1.0).unwrap();
        // ln(1) - ln(1e-3) = 6.907...
        assert_eq!(s.len(), 6);
    }
}
