//! Training-time event augmentations: EventDilation, EventDrop and x-axis
//! reversal. All are pure and deterministic given `(input, config, seed)`.

use crate::error::{Error, Result};
use crate::event::{Event, EventHistogram, EventStream};
use crate::rng::{derive_seed, rng_from};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Bounds of the random integration span `Δt ~ U(t_min, t_max)` in µs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DilationConfig {
    pub t_min_us: u64,
    pub t_max_us: u64,
}

impl DilationConfig {
    pub fn new(t_min_us: u64, t_max_us: u64) -> Result<Self> {
        let cfg = Self { t_min_us, t_max_us };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_min_us == 0 || self.t_min_us > self.t_max_us {
            return Err(Error::InvalidConfig(format!(
                "dilation needs 0 < t_min <= t_max, got [{}, {}]",
                self.t_min_us, self.t_max_us
            )));
        }
        Ok(())
    }

    /// Draws `Δt` uniformly over the integers in `[t_min, t_max]`.
    pub fn sample_span(&self, seed: u64) -> u64 {
        rng_from(seed).random_range(self.t_min_us..=self.t_max_us)
    }
}

/// Keeps the events with `t ∈ [t_c − Δt/2, t_c + Δt/2]` (closed on both
/// ends), with `Δt` drawn from `cfg` under `seed`.
pub fn event_dilation(stream: &EventStream, t_c: u64, cfg: &DilationConfig, seed: u64) -> Result<EventStream> {
    cfg.validate()?;
    Ok(dilate_with_span(stream, t_c, cfg.sample_span(seed)))
}

/// Dilation with an explicit span. Half-spans are exact: an odd `span`
/// keeps `2t ∈ [2t_c − span, 2t_c + span]`.
pub fn dilate_with_span(stream: &EventStream, t_c: u64, span: u64) -> EventStream {
    let (lo, hi) = dilation_bounds(t_c, span);
    EventStream::from_parts_unchecked(stream.geometry(), stream.window_closed(lo, hi).to_vec())
}

/// Integer closed bounds `[lo, hi]` equivalent to the real interval
/// `[t_c − span/2, t_c + span/2]`.
pub fn dilation_bounds(t_c: u64, span: u64) -> (u64, u64) {
    let lo2 = (2 * t_c as u128).saturating_sub(span as u128);
    let hi2 = 2 * t_c as u128 + span as u128;
    let lo = lo2.div_ceil(2) as u64;
    let hi = (hi2 / 2).min(u64::MAX as u128) as u64;
    (lo, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropMode {
    /// Each event removed independently with probability `ratio`.
    Random,
    /// One contiguous span covering `ratio` of the stream's duration removed.
    TimeWindow,
    /// One rectangle covering about `ratio` of the sensor area removed.
    SpatialRegion,
}

pub const DROP_MODES: [DropMode; 3] = [DropMode::Random, DropMode::TimeWindow, DropMode::SpatialRegion];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropConfig {
    pub mode: DropMode,
    pub ratio: f64,
}

impl DropConfig {
    pub fn new(mode: DropMode, ratio: f64) -> Result<Self> {
        let cfg = Self { mode, ratio };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(Error::InvalidConfig(format!("drop ratio must lie in [0, 1), got {}", self.ratio)));
        }
        Ok(())
    }
}

/// EventDrop: removes events according to `cfg`. The output is always a
/// subsequence of the input.
pub fn event_drop(stream: &EventStream, cfg: &DropConfig, seed: u64) -> Result<EventStream> {
    cfg.validate()?;
    if cfg.ratio == 0.0 || stream.is_empty() {
        return Ok(stream.clone());
    }
    let mut rng = rng_from(seed);
    let keep: Vec<Event> = match cfg.mode {
        DropMode::Random => stream
            .events()
            .iter()
            .filter(|_| !rng.random_bool(cfg.ratio))
            .copied()
            .collect(),
        DropMode::TimeWindow => {
            let (first, last) = stream.time_span().expect("non-empty");
            let duration = last - first + 1;
            let cut = ((duration as f64) * cfg.ratio).round() as u64;
            let start = first + rng.random_range(0..=duration - cut);
            stream
                .events()
                .iter()
                .filter(|e| e.t < start || e.t >= start + cut)
                .copied()
                .collect()
        }
        DropMode::SpatialRegion => {
            let g = stream.geometry();
            let side = cfg.ratio.sqrt();
            let rw = ((f64::from(g.width) * side).round() as u32).min(g.width);
            let rh = ((f64::from(g.height) * side).round() as u32).min(g.height);
            let x0 = rng.random_range(0..=g.width - rw);
            let y0 = rng.random_range(0..=g.height - rh);
            stream
                .events()
                .iter()
                .filter(|e| {
                    let (x, y) = (u32::from(e.x), u32::from(e.y));
                    !(x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh)
                })
                .copied()
                .collect()
        }
    };
    Ok(EventStream::from_parts_unchecked(stream.geometry(), keep))
}

/// EventDrop with the mode itself drawn uniformly per sample.
pub fn random_event_drop(stream: &EventStream, ratio: f64, seed: u64) -> Result<EventStream> {
    let mode = DROP_MODES[rng_from(seed ^ 0x5eed_d409).random_range(0..DROP_MODES.len())];
    event_drop(stream, &DropConfig::new(mode, ratio)?, seed)
}

/// `counts'[c][y][x] = counts[c][y][width − 1 − x]`.
pub fn flip_x(hist: &EventHistogram) -> EventHistogram {
    hist.flip_x()
}

/// Which augmentations the training pipeline applies, with their settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub dilation: bool,
    pub flip: bool,
    pub drop: bool,
    /// Required when `dilation` is on.
    pub dilation_window: Option<DilationConfig>,
    pub flip_prob: f64,
    pub drop_ratio: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            dilation: false,
            flip: false,
            drop: false,
            dilation_window: None,
            flip_prob: 0.5,
            drop_ratio: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.dilation, self.dilation_window) {
            (true, None) => {
                return Err(Error::InvalidConfig(
                    "augment.dilation is on but augment.dilation_window (t_min_us, t_max_us) is missing".into(),
                ))
            }
            (_, Some(d)) => d.validate()?,
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidConfig("augment.flip_prob must lie in [0, 1]".into()));
        }
        DropConfig::new(DropMode::Random, self.drop_ratio)?;
        Ok(())
    }

    /// Short label such as `D+X+E`, or `None`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.dilation, "D"), (self.flip, "X"), (self.drop, "E")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, l)| *l)
            .collect();
        if parts.is_empty() {
            "None".into()
        } else {
            parts.join("+")
        }
    }
}

/// Training-time histogram of the window centered at `t_c`. Dilation
/// replaces the fixed `[t_c - half, t_c + half)` window.
pub fn augmented_histogram(
    stream: &EventStream,
    t_c: u64,
    half_window_us: u64,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<EventHistogram> {
    let (events, window) = match (cfg.dilation, cfg.dilation_window) {
        (true, Some(d)) => {
            let span = d.sample_span(derive_seed(seed, "dilation"));
            let (lo, hi) = dilation_bounds(t_c, span);
            (stream.window_closed(lo, hi), (lo, hi.saturating_add(1)))
        }
        (true, None) => return Err(Error::InvalidConfig("dilation enabled without a window".into())),
        _ => {
            let w = (t_c.saturating_sub(half_window_us), t_c + half_window_us);
            (stream.window(w.0, w.1), w)
        }
    };
    let mut hist = if cfg.drop && cfg.drop_ratio > 0.0 {
        let part = EventStream::from_parts_unchecked(stream.geometry(), events.to_vec());
        let dropped = random_event_drop(&part, cfg.drop_ratio, derive_seed(seed, "drop"))?;
        EventHistogram::from_events(stream.geometry(), window, dropped.events())
    } else {
        EventHistogram::from_events(stream.geometry(), window, events)
    };
    if cfg.flip && rng_from(derive_seed(seed, "flip")).random_bool(cfg.flip_prob) {
        hist = hist.flip_x();
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Geometry, Polarity};
    use proptest::prelude::*;
    use rand::Rng;

    fn stream_at(times: &[u64]) -> EventStream {
        EventStream::new(
            Geometry::new(8, 8),
            times
                .iter()
                .enumerate()
                .map(|(i, &t)| Event::new(t, (i % 8) as u16, (i / 8 % 8) as u16, Polarity::On))
                .collect(),
        )
        .unwrap()
    }

    fn random_stream(seed: u64, n: usize) -> EventStream {
        let mut rng = rng_from(seed);
        let mut events: Vec<Event> = (0..n)
            .map(|_| {
                Event::new(
                    rng.random_range(0..100_000),
                    rng.random_range(0..16),
                    rng.random_range(0..12),
                    if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off },
                )
            })
            .collect();
        events.sort_by_key(|e| e.t);
        EventStream::new(Geometry::new(16, 12), events).unwrap()
    }

    #[test]
    fn dilation_interval_membership() {
        let s = stream_at(&[0, 10, 20, 30]);
        let out = dilate_with_span(&s, 15, 10);
        let ts: Vec<u64> = out.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![10, 20]);
    }

    #[test]
    fn dilation_full_span_is_identity() {
        let s = random_stream(3, 500);
        let (a, b) = s.time_span().unwrap();
        let span = b - a;
        let cfg = DilationConfig::new(span, span).unwrap();
        // midpoint rounding: use a span one larger when the duration is odd
        let t_c = a + span / 2;
        let cfg = if span % 2 == 1 { DilationConfig::new(span + 1, span + 1).unwrap() } else { cfg };
        assert_eq!(event_dilation(&s, t_c, &cfg, 99).unwrap(), s);
    }

    #[test]
    fn dilation_rejects_bad_config() {
        assert!(DilationConfig::new(0, 10).is_err());
        assert!(DilationConfig::new(11, 10).is_err());
    }

    #[test]
    fn dilation_span_is_uniform_ks() {
        let cfg = DilationConfig::new(1_000, 5_000).unwrap();
        let n = 10_000usize;
        let mut spans: Vec<f64> = (0..n as u64).map(|s| cfg.sample_span(s) as f64).collect();
        spans.sort_by(f64::total_cmp);
        let width = 4_001.0; // integers 1000..=5000
        let d = spans
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cdf = (v - 1_000.0 + 1.0) / width;
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (cdf - lo).abs().max((hi - cdf).abs())
            })
            .fold(0.0, f64::max);
        // 5% critical value of the KS statistic
        assert!(d < 1.36 / (n as f64).sqrt(), "KS D = {d}");
        assert!(spans[0] >= 1_000.0 && spans[n - 1] <= 5_000.0);
    }

    #[test]
    fn dilation_is_deterministic() {
        let s = random_stream(5, 300);
        let cfg = DilationConfig::new(1_000, 50_000).unwrap();
        assert_eq!(event_dilation(&s, 50_000, &cfg, 7).unwrap(), event_dilation(&s, 50_000, &cfg, 7).unwrap());
    }

    #[test]
    fn zero_ratio_is_identity() {
        let s = random_stream(1, 200);
        for mode in DROP_MODES {
            assert_eq!(event_drop(&s, &DropConfig::new(mode, 0.0).unwrap(), 4).unwrap(), s);
        }
        assert!(DropConfig::new(DropMode::Random, 1.0).is_err());
    }

    #[test]
    fn random_drop_is_binomial() {
        let s = random_stream(11, 10_000);
        let out = event_drop(&s, &DropConfig::new(DropMode::Random, 0.5).unwrap(), 21).unwrap();
        let sigma = (10_000.0f64 * 0.25).sqrt();
        assert!((out.len() as f64 - 5_000.0).abs() < 3.0 * sigma, "kept {}", out.len());
    }

    #[test]
    fn time_window_drop_removes_contiguous_span() {
        let s = stream_at(&(0..100).collect::<Vec<_>>());
        let out = event_drop(&s, &DropConfig::new(DropMode::TimeWindow, 0.2).unwrap(), 3).unwrap();
        assert_eq!(out.len(), 80);
        let removed: Vec<u64> = (0..100).filter(|t| !out.events().iter().any(|e| e.t == *t)).collect();
        assert_eq!(removed.len(), 20);
        assert_eq!(removed[19] - removed[0], 19);
    }

    proptest! {
        #[test]
        fn drop_yields_sorted_subsequence(seed in any::<u64>(), ratio in 0.0f64..0.95, mode in 0usize..3) {
            let s = random_stream(seed, 150);
            let out = event_drop(&s, &DropConfig::new(DROP_MODES[mode], ratio).unwrap(), seed).unwrap();
            prop_assert!(out.len() <= s.len());
            let mut it = s.events().iter();
            for e in out.events() {
                prop_assert!(it.any(|x| x == e), "not a subsequence");
            }
        }

        #[test]
        fn dilation_is_monotone_in_span(seed in any::<u64>(), t_c in 0u64..100_000, a in 1u64..50_000, b in 1u64..50_000) {
            let s = random_stream(seed, 200);
            let (small, large) = (a.min(b), a.max(b));
            let inner = dilate_with_span(&s, t_c, small);
            let outer = dilate_with_span(&s, t_c, large);
            prop_assert!(inner.len() <= outer.len());
            for e in inner.events() {
                prop_assert!(outer.events().contains(e));
            }
        }
    }

    #[test]
    fn pipeline_without_augmentation_is_plain_histogram() {
        let s = random_stream(4, 800);
        let cfg = AugmentConfig::default();
        let h = augmented_histogram(&s, 50_000, 20_000, &cfg, 1).unwrap();
        assert_eq!(h, crate::event::build_histogram(&s, (30_000, 70_000)).unwrap());
    }

    #[test]
    fn pipeline_dilation_and_drop_only_remove() {
        let s = random_stream(5, 800);
        let cfg = AugmentConfig {
            dilation: true,
            drop: true,
            flip: true,
            dilation_window: Some(DilationConfig::new(10_000, 60_000).unwrap()),
            ..Default::default()
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.label(), "D+X+E");
        for seed in 0..20 {
            let h = augmented_histogram(&s, 50_000, 20_000, &cfg, seed).unwrap();
            let (lo, hi) = h.window();
            let full = crate::event::build_histogram(&s, (lo, hi)).unwrap();
            assert!(h.total() <= full.total());
            assert_eq!(h, augmented_histogram(&s, 50_000, 20_000, &cfg, seed).unwrap());
        }
        let missing = AugmentConfig {
            dilation: true,
            ..Default::default()
        };
        assert!(missing.validate().is_err());
        assert_eq!(AugmentConfig::default().label(), "None");
    }
}
