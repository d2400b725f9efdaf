//! Plain-text `t,x,y,p` events with `p` in {1, -1}.

use std::fmt::Write;

use super::{Event, EventIoError, EventStream, Polarity, Result};

fn is_header(line: &str) -> bool {
    let fields: Vec<String> = line.split(',').map(|f| f.trim().to_ascii_lowercase()).collect();
    fields == ["t", "x", "y", "p"]
}

/// Parses CSV events for a `width × height` sensor. A leading `t,x,y,p`
/// header and blank lines are allowed.
pub fn parse_evt_csv(text: &str, width: u16, height: u16) -> Result<EventStream> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || (events.is_empty() && is_header(line)) {
            continue;
        }
        let err = |message: String| EventIoError::Csv { line: line_no, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [t, x, y, p] = fields[..] else {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        };
        let t: u64 = t.parse().map_err(|_| err(format!("bad timestamp {t:?}")))?;
        let x: u16 = x.parse().map_err(|_| err(format!("bad x {x:?}")))?;
        let y: u16 = y.parse().map_err(|_| err(format!("bad y {y:?}")))?;
        let polarity = match p {
            "1" | "+1" => Polarity::On,
            "-1" => Polarity::Off,
            other => return Err(err(format!("polarity must be 1 or -1, got {other:?}"))),
        };
        if x >= width || y >= height {
            return Err(err(format!("event at ({x}, {y}) outside {width}×{height} sensor")));
        }
        if events.last().is_some_and(|e: &Event| e.t > t) {
            return Err(err(format!("timestamp {t} precedes the previous event")));
        }
        events.push(Event { t, x, y, polarity });
    }
    EventStream::new(width, height, events)
}

pub fn write_evt_csv(stream: &EventStream) -> String {
    let mut out = String::from("t,x,y,p\n");
    for e in stream.events() {
        writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.polarity.sign()).expect("write to String");
    }
    out
}
