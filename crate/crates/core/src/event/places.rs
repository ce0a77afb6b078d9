use super::EventStream;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// A geographic position: either `(lat, lon)` in degrees or a 1-D route
/// arc-length coordinate in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Position {
    Route(f64),
    Geo { lat: f64, lon: f64 },
}

impl Position {
    /// Great-circle distance for geographic positions, absolute difference
    /// for route positions. Mixed kinds are never comparable (infinite).
    pub fn distance_m(&self, other: &Position) -> f64 {
        match (*self, *other) {
            (Position::Route(a), Position::Route(b)) => (a - b).abs(),
            (Position::Geo { lat: la1, lon: lo1 }, Position::Geo { lat: la2, lon: lo2 }) => {
                let (p1, p2) = (la1.to_radians(), la2.to_radians());
                let dp = p2 - p1;
                let dl = (lo2 - lo1).to_radians();
                let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
                2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
            }
            _ => f64::INFINITY,
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Position::Route(m) => m.is_finite(),
            Position::Geo { lat, lon } => lat.is_finite() && lon.is_finite(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: u64,
    pub position: Position,
}

/// Time-sorted pose samples with finite positions.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseTrack {
    samples: Vec<PoseSample>,
}

impl PoseTrack {
    pub fn new(samples: Vec<PoseSample>) -> Result<Self> {
        if let Some(i) = samples.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::Unsorted { index: i + 1 });
        }
        if samples.iter().any(|s| !s.position.is_finite()) {
            return Err(Error::NonFinite("pose position".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    /// Cumulative traveled distance at each sample.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            if i > 0 {
                acc += self.samples[i - 1].position.distance_m(&s.position);
            }
            out.push(acc);
        }
        out
    }

    /// Linearly interpolated position at time `t` (clamped to the ends).
    pub fn position_at(&self, t: u64) -> Option<Position> {
        let first = self.samples.first()?;
        let i = self.samples.partition_point(|s| s.t < t);
        if i == 0 {
            return Some(first.position);
        }
        if i == self.samples.len() {
            return Some(self.samples[i - 1].position);
        }
        let (a, b) = (self.samples[i - 1], self.samples[i]);
        if b.t == a.t {
            return Some(b.position);
        }
        let f = (t - a.t) as f64 / (b.t - a.t) as f64;
        Some(match (a.position, b.position) {
            (Position::Route(p), Position::Route(q)) => Position::Route(p + f * (q - p)),
            (Position::Geo { lat: la, lon: lo }, Position::Geo { lat: lb, lon: lob }) => Position::Geo {
                lat: la + f * (lb - la),
                lon: lo + f * (lob - lo),
            },
            (_, q) => q,
        })
    }
}

/// One place observation: a time window of a traverse's stream centered on
/// a pose, with its ground-truth position.
#[derive(Clone, Debug)]
pub struct PlaceSample {
    pub place_id: u32,
    pub traverse_id: u32,
    pub position: Position,
    pub center_us: u64,
    pub window: (u64, u64),
    pub stream: Arc<EventStream>,
}

/// One place per `spacing_m` of traveled arc length starting at the first
/// pose; see [`slice_places_from`].
pub fn slice_places(
    stream: &Arc<EventStream>,
    track: &PoseTrack,
    spacing_m: f64,
    half_window_us: u64,
    traverse_id: u32,
) -> Result<Vec<PlaceSample>> {
    slice_places_from(stream, track, spacing_m, half_window_us, traverse_id, 0.0)
}

/// One place at traveled arc length `offset_m + k * spacing_m` for every
/// `k` inside the track. Each place is centered at the pose timestamp
/// nearest to the crossing, with window `[t_c - half, t_c + half)`.
pub fn slice_places_from(
    stream: &Arc<EventStream>,
    track: &PoseTrack,
    spacing_m: f64,
    half_window_us: u64,
    traverse_id: u32,
    offset_m: f64,
) -> Result<Vec<PlaceSample>> {
    if track.samples.len() < 2 {
        return Err(Error::TrackTooShort(track.samples.len()));
    }
    if !(spacing_m > 0.0 && spacing_m.is_finite()) {
        return Err(Error::InvalidConfig(format!("place spacing must be > 0, got {spacing_m}")));
    }
    if half_window_us == 0 {
        return Err(Error::InvalidConfig("half window must be positive".into()));
    }
    let arcs = track.arc_lengths();
    let total = *arcs.last().expect("non-empty");
    let mut places = Vec::new();
    let mut k = 0u32;
    loop {
        let target = offset_m + f64::from(k) * spacing_m;
        if target > total + 1e-9 || offset_m < 0.0 {
            break;
        }
        let i = arcs.partition_point(|&a| a < target).min(arcs.len() - 1);
        let nearest = if i > 0 && (target - arcs[i - 1]) <= (arcs[i] - target) { i - 1 } else { i };
        let pose = track.samples[nearest];
        places.push(PlaceSample {
            place_id: k,
            traverse_id,
            position: pose.position,
            center_us: pose.t,
            window: (pose.t.saturating_sub(half_window_us), pose.t + half_window_us),
            stream: Arc::clone(stream),
        });
        k += 1;
    }
    Ok(places)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Geometry;

    #[test]
    fn positions_round_trip_through_json() {
        for p in [Position::Route(12.5), Position::Geo { lat: 51.5, lon: -0.1 }] {
            let s = serde_json::to_string(&p).unwrap();
            assert_eq!(serde_json::from_str::<Position>(&s).unwrap(), p);
        }
    }

    fn straight(length_m: f64, samples: usize) -> PoseTrack {
        PoseTrack::new(
            (0..samples)
                .map(|i| PoseSample {
                    t: i as u64 * 1000,
                    position: Position::Route(length_m * i as f64 / (samples - 1) as f64),
                })
                .collect(),
        )
        .unwrap()
    }

    fn stream() -> Arc<EventStream> {
        Arc::new(EventStream::empty(Geometry::new(4, 4)))
    }

    #[test]
    fn hundred_meter_track_thirty_meter_spacing() {
        let places = slice_places(&stream(), &straight(100.0, 101), 30.0, 500, 0).unwrap();
        let pos: Vec<f64> = places
            .iter()
            .map(|p| match p.position {
                Position::Route(m) => m,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(pos, vec![0.0, 30.0, 60.0, 90.0]);
        assert_eq!(places[1].window, (30_000 - 500, 30_000 + 500));
    }

    #[test]
    fn degenerate_spacing_and_stationary_track() {
        assert_eq!(slice_places(&stream(), &straight(100.0, 11), 500.0, 10, 0).unwrap().len(), 1);
        let still = PoseTrack::new(
            (0..5)
                .map(|i| PoseSample {
                    t: i * 10,
                    position: Position::Route(3.0),
                })
                .collect(),
        )
        .unwrap();
        let places = slice_places(&stream(), &still, 30.0, 10, 0).unwrap();
        assert_eq!(places.len(), 1);
        assert_eq!(places[0].center_us, 0);
    }

    #[test]
    fn short_track_is_an_error() {
        let one = PoseTrack::new(vec![PoseSample {
            t: 0,
            position: Position::Route(0.0),
        }])
        .unwrap();
        assert!(matches!(slice_places(&stream(), &one, 30.0, 10, 0), Err(Error::TrackTooShort(1))));
    }

    #[test]
    fn geo_distance_is_great_circle() {
        let a = Position::Geo { lat: 0.0, lon: 0.0 };
        let b = Position::Geo { lat: 0.0, lon: 1.0 };
        let expected = EARTH_RADIUS_M * 1f64.to_radians();
        assert!((a.distance_m(&b) - expected).abs() < 1e-6);
        assert_eq!(Position::Route(2.0).distance_m(&Position::Route(-3.0)), 5.0);
    }

    #[test]
    fn nearest_pose_to_crossing() {
        // poses every 7 m; crossing at 30 m is nearest to the 28 m pose
        let track = straight(70.0, 11);
        let places = slice_places(&stream(), &track, 30.0, 1, 0).unwrap();
        assert_eq!(places[1].position, Position::Route(28.0));
        assert_eq!(places[2].position, Position::Route(63.0));
    }
}
