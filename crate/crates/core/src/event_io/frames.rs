//! RGB frames, binary PPM (P6) codec and frame-directory layout
//! (`frames/NNNN.ppm` plus `timestamps.txt`, one integer per line).

use std::fs;
use std::path::Path;

use super::{EventIoError, Result};

/// An `H × W × 3` image with values in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    rgb: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, rgb: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || rgb.len() != width * height * 3 {
            return Err(EventIoError::InvalidArgument(format!(
                "frame {width}×{height} needs {} samples, got {}",
                width * height * 3,
                rgb.len()
            )));
        }
        if let Some(v) = rgb.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(EventIoError::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, rgb })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height * 3])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgb(&self) -> &[f64] {
        &self.rgb
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Mean of the three colour channels.
    pub fn luminance(&self, x: usize, y: usize) -> f64 {
        let [r, g, b] = self.pixel(x, y);
        (r + g + b) / 3.0
    }
}

/// Frames sharing one extent, with strictly increasing timestamps (µs).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    timestamps: Vec<u64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, timestamps: Vec<u64>) -> Result<Self> {
        if frames.len() != timestamps.len() {
            return Err(EventIoError::InvalidArgument(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        if let Some(first) = frames.first() {
            if let Some(f) = frames.iter().find(|f| f.width != first.width || f.height != first.height) {
                return Err(EventIoError::InvalidArgument(format!(
                    "frame extents differ: {}×{} vs {}×{}",
                    first.width, first.height, f.width, f.height
                )));
            }
        }
        if let Some(w) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(EventIoError::InvalidArgument(format!(
                "timestamps not strictly increasing at frame {}",
                w + 1
            )));
        }
        Ok(Self { frames, timestamps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(width, height)` of the frames, if any.
    pub fn extent(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.width, f.height))
    }
}

fn image_err(path: &str, message: impl Into<String>) -> EventIoError {
    EventIoError::Image {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Encodes a frame as 8-bit P6.
pub fn write_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(frame.rgb.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// Decodes a P6 image (8- or 16-bit samples); `name` labels errors.
pub fn read_ppm(bytes: &[u8], name: &str) -> Result<Frame> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(image_err(name, "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| image_err(name, "non-ASCII header"))?);
    }
    if fields[0] != "P6" {
        return Err(image_err(name, format!("unsupported magic {:?}", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| image_err(name, format!("bad {what} {s:?}")))
    };
    let width = num(fields[1], "width")?;
    let height = num(fields[2], "height")?;
    let maxval = num(fields[3], "maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(image_err(name, format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let need = width * height * 3 * bytes_per;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < need {
        return Err(image_err(name, format!("raster has {} bytes, expected {need}", raster.len())));
    }
    let scale = maxval as f64;
    let rgb = if bytes_per == 1 {
        raster[..need].iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
    } else {
        raster[..need]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / scale).min(1.0))
            .collect()
    };
    Frame::new(width, height, rgb).map_err(|e| image_err(name, e.to_string()))
}

/// Writes `dir/frames/NNNN.ppm` and `dir/timestamps.txt`.
pub fn write_frame_dir(dir: &Path, seq: &FrameSequence) -> Result<()> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    for (i, frame) in seq.frames.iter().enumerate() {
        fs::write(frames_dir.join(format!("{i:04}.ppm")), write_ppm(frame))?;
    }
    let stamps: String = seq.timestamps.iter().map(|t| format!("{t}\n")).collect();
    fs::write(dir.join("timestamps.txt"), stamps)?;
    Ok(())
}

/// Reads the layout produced by [`write_frame_dir`]; frames are taken in
/// file-name order.
pub fn read_frame_dir(dir: &Path) -> Result<FrameSequence> {
    let mut paths: Vec<_> = fs::read_dir(dir.join("frames"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    let frames = paths
        .iter()
        .map(|p| read_ppm(&fs::read(p)?, &p.display().to_string()))
        .collect::<Result<Vec<_>>>()?;

    let stamp_path = dir.join("timestamps.txt");
    let text = fs::read_to_string(&stamp_path)?;
    let timestamps = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<u64>().map_err(|_| EventIoError::Csv {
                line: i + 1,
                message: format!("{}: bad timestamp {l:?}", stamp_path.display()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, timestamps)
}
