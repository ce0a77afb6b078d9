//! Event streams, histograms, decimation and place slicing.
//!
//! Timestamps are integer microseconds everywhere in this module. Windows
//! are half-open `[start, end)` so that adjacent windows partition a stream.

mod histogram;
pub mod io;
mod places;

pub use histogram::{build_histogram, EventHistogram};
pub use io::{parse_event_file, parse_pose_file, write_event_file, write_pose_file, EventFormat, ParsedEvents};
pub use places::{slice_places, slice_places_from, PlaceSample, PoseSample, PoseTrack, Position};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    /// Histogram channel: 0 for ON, 1 for OFF.
    pub fn channel(self) -> usize {
        match self {
            Polarity::On => 0,
            Polarity::Off => 1,
        }
    }

    /// Accepts both `{-1, 1}` and `{0, 1}` encodings.
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(Polarity::On),
            0 | -1 => Some(Polarity::Off),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub width: u32,
    pub height: u32,
}

impl Geometry {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Time-ordered events from one sensor. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    geometry: Geometry,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream from events that must already be sorted and in bounds.
    pub fn new(geometry: Geometry, events: Vec<Event>) -> Result<Self> {
        check_bounds(geometry, &events)?;
        if let Some(i) = first_unsorted(&events) {
            return Err(Error::Unsorted { index: i });
        }
        Ok(Self { geometry, events })
    }

    /// Builds a stream, stably sorting by timestamp if needed. Returns the
    /// number of out-of-order records found.
    pub fn from_unsorted(geometry: Geometry, mut events: Vec<Event>) -> Result<(Self, usize)> {
        check_bounds(geometry, &events)?;
        let disorder = events.windows(2).filter(|w| w[1].t < w[0].t).count();
        if disorder > 0 {
            events.sort_by_key(|e| e.t);
        }
        Ok((Self { geometry, events }, disorder))
    }

    pub fn empty(geometry: Geometry) -> Self {
        Self {
            geometry,
            events: Vec::new(),
        }
    }

    /// Internal constructor for transforms that provably keep order and bounds.
    pub(crate) fn from_parts_unchecked(geometry: Geometry, events: Vec<Event>) -> Self {
        debug_assert!(first_unsorted(&events).is_none());
        Self { geometry, events }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
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

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// `(first t, last t)` or `None` for an empty stream.
    pub fn time_span(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    /// Events with `start <= t < end`.
    pub fn window(&self, start: u64, end: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < start);
        let hi = self.events.partition_point(|e| e.t < end);
        &self.events[lo..hi.max(lo)]
    }

    /// Events with `start <= t <= end` (closed interval).
    pub fn window_closed(&self, start: u64, end: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < start);
        let hi = self.events.partition_point(|e| e.t <= end);
        &self.events[lo..hi.max(lo)]
    }

    /// Copies the half-open window into a new stream.
    pub fn slice(&self, start: u64, end: u64) -> EventStream {
        Self::from_parts_unchecked(self.geometry, self.window(start, end).to_vec())
    }
}

fn check_bounds(geometry: Geometry, events: &[Event]) -> Result<()> {
    match events
        .iter()
        .find(|e| !geometry.contains(u32::from(e.x), u32::from(e.y)))
    {
        Some(e) => Err(Error::GeometryViolation {
            x: e.x.into(),
            y: e.y.into(),
            width: geometry.width,
            height: geometry.height,
        }),
        None => Ok(()),
    }
}

fn first_unsorted(events: &[Event]) -> Option<usize> {
    events.windows(2).position(|w| w[1].t < w[0].t).map(|i| i + 1)
}

/// Floor-ratio coordinate decimation onto a smaller sensor:
/// `x' = floor(x * width' / width)`, likewise for `y`.
pub fn spatial_decimate(stream: &EventStream, target: Geometry) -> Result<EventStream> {
    let src = stream.geometry();
    if target.width > src.width || target.height > src.height || target.width == 0 || target.height == 0 {
        return Err(Error::TargetLargerThanSource {
            target: (target.width, target.height),
            source_geometry: (src.width, src.height),
        });
    }
    let (sw, sh) = (u64::from(src.width), u64::from(src.height));
    let (tw, th) = (u64::from(target.width), u64::from(target.height));
    let events = stream
        .events()
        .iter()
        .map(|e| Event {
            x: (u64::from(e.x) * tw / sw) as u16,
            y: (u64::from(e.y) * th / sh) as u16,
            ..*e
        })
        .collect();
    Ok(EventStream::from_parts_unchecked(target, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(t: u64, x: u16, y: u16, p: i64) -> Event {
        Event::new(t, x, y, Polarity::from_code(p).unwrap())
    }

    #[test]
    fn constructor_rejects_out_of_bounds_and_unsorted() {
        let g = Geometry::new(4, 4);
        assert!(matches!(
            EventStream::new(g, vec![ev(0, 4, 0, 1)]),
            Err(Error::GeometryViolation { .. })
        ));
        assert!(matches!(
            EventStream::new(g, vec![ev(5, 0, 0, 1), ev(1, 0, 0, 1)]),
            Err(Error::Unsorted { index: 1 })
        ));
        let (s, disorder) = EventStream::from_unsorted(g, vec![ev(5, 0, 0, 1), ev(1, 1, 0, 1)]).unwrap();
        assert_eq!(disorder, 1);
        assert_eq!(s.events()[0].t, 1);
    }

    #[test]
    fn polarity_codes() {
        assert_eq!(Polarity::from_code(0), Some(Polarity::Off));
        assert_eq!(Polarity::from_code(-1), Some(Polarity::Off));
        assert_eq!(Polarity::from_code(1), Some(Polarity::On));
        assert_eq!(Polarity::from_code(2), None);
    }

    #[test]
    fn decimate_identity() {
        let g = Geometry::new(8, 6);
        let s = EventStream::new(g, vec![ev(0, 7, 5, 1), ev(3, 2, 1, -1)]).unwrap();
        assert_eq!(spatial_decimate(&s, g).unwrap(), s);
    }

    #[test]
    fn decimate_dvxplorer_corner() {
        let s = EventStream::new(Geometry::new(640, 480), vec![ev(0, 639, 479, 1)]).unwrap();
        let d = spatial_decimate(&s, Geometry::new(346, 268)).unwrap();
        // 639*346/640 = 345.45.. ; 479*268/480 = 267.44..
        assert_eq!((d.events()[0].x, d.events()[0].y), (345, 267));
    }

    #[test]
    fn decimate_rejects_upscaling() {
        let s = EventStream::empty(Geometry::new(10, 10));
        assert!(matches!(
            spatial_decimate(&s, Geometry::new(11, 10)),
            Err(Error::TargetLargerThanSource { .. })
        ));
    }

    proptest! {
        #[test]
        fn decimate_preserves_count_and_bounds(
            raw in proptest::collection::vec((0u64..10_000, 0u16..640, 0u16..480, any::<bool>()), 0..300),
            tw in 1u32..=640, th in 1u32..=480,
        ) {
            let mut events: Vec<Event> = raw.iter()
                .map(|&(t, x, y, on)| Event::new(t, x, y, if on { Polarity::On } else { Polarity::Off }))
                .collect();
            events.sort_by_key(|e| e.t);
            let s = EventStream::new(Geometry::new(640, 480), events).unwrap();
            let target = Geometry::new(tw, th);
            let d = spatial_decimate(&s, target).unwrap();
            prop_assert_eq!(d.len(), s.len());
            for (a, b) in s.events().iter().zip(d.events()) {
                prop_assert!(target.contains(b.x.into(), b.y.into()));
                prop_assert_eq!(a.t, b.t);
                prop_assert_eq!(a.p, b.p);
            }
        }
    }
}
