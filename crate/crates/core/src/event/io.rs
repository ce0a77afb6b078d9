//! Event and pose file formats.
//!
//! * CSV events: optional header, rows `t_us,x,y,p` with `p` in `{-1,1}` or `{0,1}`.
//! * `evt` binary: magic `EVT1`, `u16` width, `u16` height, `u32` reserved (0),
//!   then 14-byte records `(u64 t_us, u16 x, u16 y, i8 p, i8 pad)`, little-endian.
//! * Pose CSV: rows `t_us,pos` (route meters) or `t_us,lat,lon` (degrees).

use super::{Event, EventStream, Geometry, Polarity, PoseSample, PoseTrack, Position};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const EVT_MAGIC: &[u8; 4] = b"EVT1";
const EVT_HEADER: usize = 12;
const EVT_RECORD: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventFormat {
    Csv,
    EvtBinary,
}

impl EventFormat {
    /// Guesses from the file extension (`.csv` or anything else as binary).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::EvtBinary,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParsedEvents {
    pub stream: EventStream,
    /// Number of records that arrived out of timestamp order (stream was re-sorted).
    pub resorted: usize,
}

/// Reads an event file. CSV carries no geometry, so `geometry` is required
/// for it; for `evt` files a supplied geometry must match the header.
pub fn parse_event_file(path: &Path, format: EventFormat, geometry: Option<Geometry>) -> Result<ParsedEvents> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        EventFormat::Csv => {
            let g = geometry.ok_or_else(|| {
                Error::InvalidConfig("CSV event files need an explicit sensor geometry".into())
            })?;
            let text = String::from_utf8(bytes).map_err(|e| Error::MalformedRecord {
                location: format!("{}", path.display()),
                message: e.to_string(),
            })?;
            parse_event_csv(&text, g)
        }
        EventFormat::EvtBinary => {
            let parsed = parse_evt_bytes(&bytes)?;
            if let Some(g) = geometry {
                if g != parsed.stream.geometry() {
                    return Err(Error::GeometryMismatch(format!(
                        "file header {:?} vs expected {:?}",
                        parsed.stream.geometry(),
                        g
                    )));
                }
            }
            Ok(parsed)
        }
    }
}

pub fn parse_event_csv(text: &str, geometry: Geometry) -> Result<ParsedEvents> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields.first().is_some_and(|f| f.parse::<u64>().is_err()) {
            continue; // header
        }
        let bad = |message: String| Error::MalformedRecord {
            location: format!("line {}", i + 1),
            message,
        };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let t: u64 = fields[0].parse().map_err(|_| bad(format!("bad timestamp {:?}", fields[0])))?;
        let x: u32 = fields[1].parse().map_err(|_| bad(format!("bad x {:?}", fields[1])))?;
        let y: u32 = fields[2].parse().map_err(|_| bad(format!("bad y {:?}", fields[2])))?;
        let p = fields[3]
            .parse::<i64>()
            .ok()
            .and_then(Polarity::from_code)
            .ok_or_else(|| bad(format!("bad polarity {:?}", fields[3])))?;
        if !geometry.contains(x, y) {
            return Err(Error::GeometryViolation {
                x,
                y,
                width: geometry.width,
                height: geometry.height,
            });
        }
        events.push(Event::new(t, x as u16, y as u16, p));
    }
    let (stream, resorted) = EventStream::from_unsorted(geometry, events)?;
    Ok(ParsedEvents { stream, resorted })
}

pub fn parse_evt_bytes(bytes: &[u8]) -> Result<ParsedEvents> {
    if bytes.len() < EVT_HEADER || &bytes[..4] != EVT_MAGIC {
        return Err(Error::MalformedRecord {
            location: "offset 0".into(),
            message: "missing EVT1 header".into(),
        });
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let body = &bytes[EVT_HEADER..];
    if body.len() % EVT_RECORD != 0 {
        return Err(Error::MalformedRecord {
            location: format!("offset {}", EVT_HEADER + body.len() / EVT_RECORD * EVT_RECORD),
            message: "truncated record".into(),
        });
    }
    let geometry = Geometry::new(width.into(), height.into());
    let mut events = Vec::with_capacity(body.len() / EVT_RECORD);
    for (i, rec) in body.chunks_exact(EVT_RECORD).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().expect("8 bytes"));
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = Polarity::from_code(i64::from(rec[12] as i8)).ok_or_else(|| Error::MalformedRecord {
            location: format!("offset {}", EVT_HEADER + i * EVT_RECORD),
            message: format!("bad polarity byte {}", rec[12] as i8),
        })?;
        events.push(Event::new(t, x, y, p));
    }
    let (stream, resorted) = EventStream::from_unsorted(geometry, events)?;
    Ok(ParsedEvents { stream, resorted })
}

pub fn evt_bytes(stream: &EventStream) -> Vec<u8> {
    let g = stream.geometry();
    let mut out = Vec::with_capacity(EVT_HEADER + EVT_RECORD * stream.len());
    out.extend_from_slice(EVT_MAGIC);
    out.extend_from_slice(&(g.width as u16).to_le_bytes());
    out.extend_from_slice(&(g.height as u16).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p.sign() as u8);
        out.push(0);
    }
    out
}

pub fn event_csv(stream: &EventStream) -> String {
    let mut out = String::from("t_us,x,y,p\n");
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p.sign()));
    }
    out
}

pub fn write_event_file(path: &Path, format: EventFormat, stream: &EventStream) -> Result<()> {
    let bytes = match format {
        EventFormat::Csv => event_csv(stream).into_bytes(),
        EventFormat::EvtBinary => evt_bytes(stream),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_pose_csv(text: &str) -> Result<PoseTrack> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields.first().is_some_and(|f| f.parse::<u64>().is_err()) {
            continue;
        }
        let bad = |message: String| Error::MalformedRecord {
            location: format!("line {}", i + 1),
            message,
        };
        let t: u64 = fields[0].parse().map_err(|_| bad(format!("bad timestamp {:?}", fields[0])))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad coordinate {s:?}")));
        let position = match fields.len() {
            2 => Position::Route(num(fields[1])?),
            3 => Position::Geo {
                lat: num(fields[1])?,
                lon: num(fields[2])?,
            },
            n => return Err(bad(format!("expected 2 or 3 fields, found {n}"))),
        };
        samples.push(PoseSample { t, position });
    }
    PoseTrack::new(samples)
}

pub fn parse_pose_file(path: &Path) -> Result<PoseTrack> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_csv(&text)
}

pub fn write_pose_file(path: &Path, track: &PoseTrack) -> Result<()> {
    let mut out = Vec::new();
    for s in track.samples() {
        match s.position {
            Position::Route(m) => writeln!(out, "{},{}", s.t, m),
            Position::Geo { lat, lon } => writeln!(out, "{},{},{}", s.t, lat, lon),
        }
        .expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_record_csv() {
        let parsed = parse_event_csv("0,1,2,1\n5,0,0,-1\n", Geometry::new(4, 4)).unwrap();
        assert_eq!(parsed.stream.len(), 2);
        assert_eq!(parsed.resorted, 0);
        assert_eq!(parsed.stream.events()[1].p, Polarity::Off);
    }

    #[test]
    fn header_and_zero_one_polarity() {
        let parsed = parse_event_csv("t_us,x,y,p\n3,0,0,0\n1,1,1,1\n", Geometry::new(2, 2)).unwrap();
        assert_eq!(parsed.resorted, 1);
        let ts: Vec<u64> = parsed.stream.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![1, 3]);
        assert_eq!(parsed.stream.events()[1].p, Polarity::Off);
    }

    #[test]
    fn empty_file_keeps_geometry() {
        let parsed = parse_event_csv("", Geometry::new(3, 5)).unwrap();
        assert!(parsed.stream.is_empty());
        assert_eq!(parsed.stream.geometry(), Geometry::new(3, 5));
        let bin = parse_evt_bytes(&evt_bytes(&EventStream::empty(Geometry::new(3, 5)))).unwrap();
        assert_eq!(bin.stream.geometry(), Geometry::new(3, 5));
    }

    #[test]
    fn malformed_rows_report_line() {
        match parse_event_csv("0,1,2,1\n5,0,x,1\n", Geometry::new(4, 4)) {
            Err(Error::MalformedRecord { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_event_csv("0,1,2,3\n", Geometry::new(4, 4)),
            Err(Error::MalformedRecord { .. })
        ));
        assert!(matches!(
            parse_event_csv("0,9,2,1\n", Geometry::new(4, 4)),
            Err(Error::GeometryViolation { .. })
        ));
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let s = EventStream::new(Geometry::new(4, 4), vec![Event::new(1, 1, 1, Polarity::On)]).unwrap();
        let mut bytes = evt_bytes(&s);
        bytes.pop();
        match parse_evt_bytes(&bytes) {
            Err(Error::MalformedRecord { location, .. }) => assert_eq!(location, "offset 12"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pose_csv_modes() {
        let t = parse_pose_csv("t_us,pos\n0,0.0\n10,5.5\n").unwrap();
        assert_eq!(t.samples()[1].position, Position::Route(5.5));
        let g = parse_pose_csv("0,-27.4,153.0\n10,-27.41,153.0\n").unwrap();
        assert!(matches!(g.samples()[0].position, Position::Geo { .. }));
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        proptest::collection::vec((0u64..1u64 << 40, 0u16..346, 0u16..260, any::<bool>()), 0..1000).prop_map(
            |raw| {
                let mut events: Vec<Event> = raw
                    .into_iter()
                    .map(|(t, x, y, on)| Event::new(t, x, y, if on { Polarity::On } else { Polarity::Off }))
                    .collect();
                events.sort_by_key(|e| e.t);
                EventStream::new(Geometry::new(346, 260), events).unwrap()
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn binary_and_csv_round_trip(stream in arb_stream()) {
            let bin = parse_evt_bytes(&evt_bytes(&stream)).unwrap();
            prop_assert_eq!(&bin.stream, &stream);
            let csv = parse_event_csv(&event_csv(&stream), stream.geometry()).unwrap();
            prop_assert_eq!(&csv.stream, &stream);
            prop_assert_eq!(evt_bytes(&bin.stream), evt_bytes(&stream));
        }
    }
}
