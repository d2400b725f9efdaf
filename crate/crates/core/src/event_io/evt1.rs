//! `EVT1`: a fixed-layout little-endian event container.
//!
//! ```text
//! header  magic "EVT1" | width u16 | height u16 | count u64      (16 bytes)
//! record  t u64 | x u16 | y u16 | p u8 (1 = ON, 0 = OFF) | pad u8 (14 bytes)
//! ```

use super::{Event, EventIoError, EventStream, Polarity, Result};

pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";
pub const EVT1_HEADER_LEN: usize = 16;
pub const EVT1_RECORD_LEN: usize = 14;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8-byte slice"))
}

pub fn parse_evt_binary(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < 4 || &bytes[..4] != EVT1_MAGIC {
        return Err(EventIoError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < EVT1_HEADER_LEN {
        return Err(EventIoError::Truncated {
            offset: bytes.len(),
            record: None,
        });
    }
    let width = u16_at(bytes, 4);
    let height = u16_at(bytes, 6);
    let count = u64_at(bytes, 8);

    let available = ((bytes.len() - EVT1_HEADER_LEN) / EVT1_RECORD_LEN) as u64;
    if available < count {
        return Err(EventIoError::Truncated {
            offset: EVT1_HEADER_LEN + available as usize * EVT1_RECORD_LEN,
            record: Some(available),
        });
    }
    let expected_len = EVT1_HEADER_LEN + count as usize * EVT1_RECORD_LEN;
    if bytes.len() != expected_len {
        return Err(EventIoError::InvalidArgument(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - expected_len
        )));
    }

    let mut events = Vec::with_capacity(count as usize);
    for (record, rec) in bytes[EVT1_HEADER_LEN..].chunks_exact(EVT1_RECORD_LEN).enumerate() {
        let t = u64_at(rec, 0);
        let (x, y) = (u16_at(rec, 8), u16_at(rec, 10));
        let polarity = match rec[12] {
            1 => Polarity::On,
            0 => Polarity::Off,
            value => return Err(EventIoError::BadPolarity { record, value }),
        };
        if x >= width || y >= height {
            return Err(EventIoError::OutOfBounds {
                record,
                x: x.into(),
                y: y.into(),
                width,
                height,
            });
        }
        events.push(Event { t, x, y, polarity });
    }
    EventStream::new(width, height, events)
}

pub fn write_evt_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVT1_HEADER_LEN + stream.len() * EVT1_RECORD_LEN);
    out.extend_from_slice(EVT1_MAGIC);
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(u8::from(e.polarity == Polarity::On));
        out.push(0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(w: u16, h: u16, count: u64) -> Vec<u8> {
        let mut b = b"EVT1".to_vec();
        b.extend_from_slice(&w.to_le_bytes());
        b.extend_from_slice(&h.to_le_bytes());
        b.extend_from_slice(&count.to_le_bytes());
        b
    }

    fn record(t: u64, x: u16, y: u16, p: u8) -> Vec<u8> {
        let mut b = t.to_le_bytes().to_vec();
        b.extend_from_slice(&x.to_le_bytes());
        b.extend_from_slice(&y.to_le_bytes());
        b.extend_from_slice(&[p, 0]);
        b
    }

    #[test]
    fn header_only_is_empty() {
        let s = parse_evt_binary(&header(4, 3, 0)).unwrap();
        assert!(s.is_empty());
        assert_eq!((s.width(), s.height()), (4, 3));
    }

    #[test]
    fn single_record() {
        let mut b = header(4, 4, 1);
        b.extend(record(5, 1, 2, 1));
        let s = parse_evt_binary(&b).unwrap();
        assert_eq!(s.events(), &[Event::new(5, 1, 2, Polarity::On)]);
        assert_eq!(write_evt_binary(&s), b);
    }

    #[test]
    fn truncated_mid_record_names_the_record() {
        let mut b = header(4, 4, 3);
        b.extend(record(1, 0, 0, 1));
        b.extend(&record(2, 0, 0, 0)[..9]);
        match parse_evt_binary(&b) {
            Err(EventIoError::Truncated { offset, record }) => {
                assert_eq!(offset, 30);
                assert_eq!(record, Some(1));
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        assert!(matches!(
            parse_evt_binary(&header(4, 4, 0)[..10]),
            Err(EventIoError::Truncated { offset: 10, record: None })
        ));
    }

    #[test]
    fn rejects_bad_magic_bounds_and_polarity() {
        let mut b = header(4, 4, 0);
        b[0] = b'X';
        assert!(matches!(parse_evt_binary(&b), Err(EventIoError::BadMagic { .. })));

        let mut b = header(4, 4, 2);
        b.extend(record(1, 0, 0, 1));
        b.extend(record(2, 4, 0, 1));
        assert!(matches!(parse_evt_binary(&b), Err(EventIoError::OutOfBounds { record: 1, .. })));

        let mut b = header(4, 4, 1);
        b.extend(record(1, 0, 0, 2));
        assert!(matches!(parse_evt_binary(&b), Err(EventIoError::BadPolarity { record: 0, value: 2 })));
    }

    #[test]
    fn rejects_unsorted_and_trailing_bytes() {
        let mut b = header(4, 4, 2);
        b.extend(record(9, 0, 0, 1));
        b.extend(record(3, 0, 0, 1));
        assert!(matches!(parse_evt_binary(&b), Err(EventIoError::Unsorted { record: 1, .. })));

        let mut b = header(4, 4, 0);
        b.push(0);
        assert!(parse_evt_binary(&b).is_err());
    }
}
