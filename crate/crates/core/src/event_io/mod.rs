//! Event-stream data model, file codecs, temporal binning and the DVS
//! simulator used to synthesize paired frame/event data.

mod csv;
mod dvs;
mod evt1;
mod frames;
mod raster;

use std::fmt;

pub use self::csv::{parse_evt_csv, write_evt_csv};
pub use dvs::simulate_dvs;
pub use evt1::{parse_evt_binary, write_evt_binary, EVT1_HEADER_LEN, EVT1_MAGIC, EVT1_RECORD_LEN};
pub use frames::{read_frame_dir, read_ppm, write_frame_dir, write_ppm, Frame, FrameSequence};
pub use raster::{rasterize_segment, resize_bilinear, segment_events, voxelize, VoxelizedEvents};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventIoError {
    #[error("bad magic {found:?}, expected \"EVT1\"")]
    BadMagic { found: Vec<u8> },

    #[error("input truncated at byte offset {offset}{}", record.map(|r| format!(" (record {r})")).unwrap_or_default())]
    Truncated { offset: usize, record: Option<u64> },

    #[error("record {record}: event at ({x}, {y}) outside {width}×{height} sensor")]
    OutOfBounds {
        record: usize,
        x: u64,
        y: u64,
        width: u16,
        height: u16,
    },

    #[error("record {record}: polarity byte {value} is neither 0 nor 1")]
    BadPolarity { record: usize, value: u8 },

    #[error("record {record}: timestamp {t} precedes the previous event")]
    Unsorted { record: usize, t: u64 },

    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("image {path}: {message}")]
    Image { path: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EventIoError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    /// `+1` for ON, `-1` for OFF.
    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }
}

/// A single `(x, y, t, p)` event; `t` in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }
}

/// Time-ordered events from a `width × height` sensor.
#[derive(Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates bounds and timestamp order.
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(EventIoError::InvalidArgument(format!(
                "sensor extents must be >= 1, got {width}×{height}"
            )));
        }
        let mut last = 0;
        for (record, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(EventIoError::OutOfBounds {
                    record,
                    x: e.x.into(),
                    y: e.y.into(),
                    width,
                    height,
                });
            }
            if e.t < last {
                return Err(EventIoError::Unsorted { record, t: e.t });
            }
            last = e.t;
        }
        Ok(Self { width, height, events })
    }

    pub fn empty(width: u16, height: u16) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of (ON, OFF) events.
    pub fn polarity_counts(&self) -> (usize, usize) {
        let on = self.events.iter().filter(|e| e.polarity == Polarity::On).count();
        (on, self.events.len() - on)
    }
}

impl fmt::Debug for EventStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventStream")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("events", &self.events.len())
            .finish()
    }
}
