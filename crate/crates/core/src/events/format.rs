use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use super::{Event, EventStream};
use crate::error::{Error, Result};

pub const BIN_V1_MAGIC: &[u8; 4] = b"EVT1";
const BIN_V1_HEADER: usize = 4 + 4 + 4 + 8;
const BIN_V1_RECORD: usize = 2 + 2 + 8 + 1;
const CSV_HEADER: &str = "x,y,t_us,p";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    BinV1,
}

impl EventFormat {
    /// `.csv` is CSV; anything else is treated as bin_v1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::BinV1,
        }
    }
}

impl FromStr for EventFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EventFormat::Csv),
            "bin" | "bin_v1" => Ok(EventFormat::BinV1),
            other => Err(Error::Invalid(format!("unknown event format `{other}`"))),
        }
    }
}

pub fn parse_events(path: &Path, format: EventFormat) -> Result<EventStream> {
    match format {
        EventFormat::Csv => {
            let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            parse_csv(std::io::BufReader::new(f), None)
        }
        EventFormat::BinV1 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_bin_v1(&bytes)
        }
    }
}

fn field<T: FromStr>(parts: &[&str], i: usize, name: &str, line: usize) -> Result<T> {
    parts[i].trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {name} `{}`", parts[i].trim()),
    })
}

/// Reads `x,y,t_us,p` lines with `p ∈ {0,1}`. Blank lines and `#` comments
/// are skipped and an optional `x,y,t_us,p` header may lead. Without `dims`
/// the sensor size is inferred from the largest coordinates.
pub fn parse_csv<R: BufRead>(reader: R, dims: Option<(u32, u32)>) -> Result<EventStream> {
    let mut events = Vec::new();
    let mut saw_content = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_content && line.replace(' ', "") == CSV_HEADER {
            saw_content = true;
            continue;
        }
        saw_content = true;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 4 fields, found {}", parts.len()),
            });
        }
        let x = field::<u16>(&parts, 0, "x", lineno)?;
        let y = field::<u16>(&parts, 1, "y", lineno)?;
        let t = field::<u64>(&parts, 2, "timestamp", lineno)?;
        let p = match parts[3].trim() {
            "0" => -1,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("polarity must be 0 or 1, got `{other}`"),
                })
            }
        };
        if let Some(prev) = events.last().map(|e: &Event| e.t) {
            if t < prev {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("timestamp {t} precedes {prev}"),
                });
            }
        }
        if let Some((w, h)) = dims {
            if x as u32 >= w || y as u32 >= h {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("({x}, {y}) outside {w}x{h}"),
                });
            }
        }
        events.push(Event::new(x, y, t, p));
    }
    if !saw_content {
        return Err(Error::format("csv", "empty event file"));
    }
    let (w, h) = match dims {
        Some(d) => d,
        None => (
            events.iter().map(|e| e.x as u32 + 1).max().unwrap_or(1),
            events.iter().map(|e| e.y as u32 + 1).max().unwrap_or(1),
        ),
    };
    EventStream::new(events, w, h)
}

pub fn write_csv<W: Write>(stream: &EventStream, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for e in stream.events() {
        writeln!(w, "{},{},{},{}", e.x, e.y, e.t, u8::from(e.p > 0))?;
    }
    Ok(())
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

/// Decodes a bin_v1 buffer. Record polarity may be `1`, `0` or `-1`
/// (the latter two both meaning negative).
pub fn parse_bin_v1(bytes: &[u8]) -> Result<EventStream> {
    if bytes.is_empty() {
        return Err(Error::format("bin_v1", "empty event file"));
    }
    if bytes.len() < BIN_V1_HEADER {
        return Err(Error::format("bin_v1", format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != BIN_V1_MAGIC {
        return Err(Error::format("bin_v1", "bad magic"));
    }
    let width = le_u32(&bytes[4..8]);
    let height = le_u32(&bytes[8..12]);
    let count = le_u64(&bytes[12..20]);
    let body = &bytes[BIN_V1_HEADER..];
    let expected = (count as u128) * BIN_V1_RECORD as u128;
    if body.len() as u128 != expected {
        return Err(Error::format(
            "bin_v1",
            format!("header declares {count} records but body has {} bytes", body.len()),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, rec) in body.chunks_exact(BIN_V1_RECORD).enumerate() {
        let p = match rec[12] as i8 {
            1 => 1,
            0 | -1 => -1,
            other => return Err(Error::format("bin_v1", format!("record {i} polarity {other}"))),
        };
        events.push(Event::new(
            u16::from_le_bytes([rec[0], rec[1]]),
            u16::from_le_bytes([rec[2], rec[3]]),
            le_u64(&rec[4..12]),
            p,
        ));
    }
    EventStream::new(events, width, height).map_err(|e| Error::format("bin_v1", e.to_string()))
}

/// Encodes polarity as `1` / `0`.
pub fn write_bin_v1<W: Write>(stream: &EventStream, mut w: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(BIN_V1_HEADER + stream.len() * BIN_V1_RECORD);
    buf.extend_from_slice(BIN_V1_MAGIC);
    buf.extend_from_slice(&stream.width().to_le_bytes());
    buf.extend_from_slice(&stream.height().to_le_bytes());
    buf.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.push(u8::from(e.p > 0));
    }
    w.write_all(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(s: &str) -> Result<EventStream> {
        parse_csv(s.as_bytes(), None)
    }

    #[test]
    fn single_csv_event() {
        let s = csv("3,4,1000,1").unwrap();
        assert_eq!(s.events(), &[Event::new(3, 4, 1000, 1)]);
        assert_eq!((s.width(), s.height()), (4, 5));
    }

    #[test]
    fn csv_zero_polarity_is_negative() {
        assert_eq!(csv("0,0,5,0").unwrap().events()[0].p, -1);
    }

    #[test]
    fn csv_rejects_out_of_order_with_line_number() {
        match csv("# comment\nx,y,t_us,p\n1,1,10,1\n\n1,1,9,0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_malformed_lines() {
        for bad in ["1,2,3", "1,2,3,2", "a,2,3,1", "1,2,-3,1", "70000,1,1,1"] {
            assert!(matches!(csv(bad), Err(Error::Parse { line: 1, .. })), "{bad}");
        }
        assert!(csv("").is_err());
        assert!(csv("# only a comment\n\n").is_err());
        assert!(parse_csv("5,0,1,1".as_bytes(), Some((4, 4))).is_err());
    }

    #[test]
    fn csv_header_only_is_an_empty_stream() {
        assert!(csv("x,y,t_us,p\n").unwrap().is_empty());
    }

    #[test]
    fn bin_roundtrip() {
        let s = EventStream::new(
            vec![Event::new(1, 2, 3, 1), Event::new(0, 0, 3, -1), Event::new(7, 5, 900, 1)],
            8,
            6,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_bin_v1(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), BIN_V1_HEADER + 3 * BIN_V1_RECORD);
        assert_eq!(parse_bin_v1(&buf).unwrap(), s);
    }

    #[test]
    fn bin_accepts_signed_negative_polarity() {
        let s = EventStream::new(vec![Event::new(0, 0, 1, -1)], 1, 1).unwrap();
        let mut buf = Vec::new();
        write_bin_v1(&s, &mut buf).unwrap();
        *buf.last_mut().unwrap() = 0xFF;
        assert_eq!(parse_bin_v1(&buf).unwrap(), s);
        *buf.last_mut().unwrap() = 2;
        assert!(parse_bin_v1(&buf).is_err());
    }

    #[test]
    fn bin_rejects_truncation_and_bad_magic() {
        let s = EventStream::new(vec![Event::new(0, 0, 1, 1)], 1, 1).unwrap();
        let mut buf = Vec::new();
        write_bin_v1(&s, &mut buf).unwrap();
        assert!(parse_bin_v1(&buf[..buf.len() - 1]).is_err());
        assert!(parse_bin_v1(&buf[..10]).is_err());
        assert!(parse_bin_v1(&[]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(parse_bin_v1(&bad).is_err());
        // count overflow must not allocate or panic
        let mut huge = buf[..BIN_V1_HEADER].to_vec();
        huge[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(parse_bin_v1(&huge).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let s = EventStream::new(vec![Event::new(2, 1, 0, -1), Event::new(0, 3, 7, 1)], 3, 4).unwrap();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        assert_eq!(parse_csv(buf.as_slice(), Some((3, 4))).unwrap(), s);
    }

    #[test]
    fn format_from_path() {
        assert_eq!(EventFormat::from_path(Path::new("a/b.CSV")), EventFormat::Csv);
        assert_eq!(EventFormat::from_path(Path::new("a/b.bin")), EventFormat::BinV1);
        assert!("xml".parse::<EventFormat>().is_err());
    }
}
