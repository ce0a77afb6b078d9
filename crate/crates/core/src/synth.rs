//! Deterministic synthetic multi-traverse event datasets.
//!
//! The world is a long binary texture made of random rectangles, one
//! texture segment per place. A camera translates laterally along it; every
//! one-pixel shift emits an event at each pixel whose brightness flips.

use crate::error::{Error, Result};
use crate::event::{build_histogram, Event, EventHistogram, EventStream, Geometry, Polarity, PoseSample, PoseTrack, Position};
use crate::rng::{derive_seed, mix, rng_from};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

/// What a traverse is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraverseSpec {
    /// Multiplier on the base speed.
    pub speed_factor: f64,
    pub direction: Direction,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouteConfig {
    pub n_places: usize,
    pub spacing_m: f64,
    /// Route length before the first and after the last place.
    pub lead_m: f64,
    pub px_per_m: f64,
    pub width: u32,
    pub height: u32,
    pub base_speed_mps: f64,
    /// Relative amplitude of the slow speed oscillation along the route.
    pub speed_wobble: f64,
    /// Background noise, events per pixel per second.
    pub noise_rate_hz: f64,
    pub scene_seed: u64,
    pub rects_per_place: usize,
    /// Probability that a rectangle is absent from a given traverse.
    pub appearance_change: f64,
    /// Each traverse starts up to this far from the nominal start.
    pub start_jitter_m: f64,
    pub vertical_jitter_px: u32,
    /// Each traverse views the scene up to this many pixels left or right
    /// of the nominal column without changing its position.
    pub lateral_jitter_px: u32,
    pub pose_rate_hz: f64,
    /// Half width of the place windows recorded in the manifest.
    pub half_window_us: u64,
    pub traverses: Vec<TraverseSpec>,
}

impl Default for RouteConfig {
    fn default() -> Self {
        let t = |speed_factor, direction, role| TraverseSpec {
            speed_factor,
            direction,
            role,
        };
        Self {
            n_places: 20,
            spacing_m: 40.0,
            lead_m: 30.0,
            px_per_m: 0.8,
            width: 32,
            height: 32,
            base_speed_mps: 10.0,
            speed_wobble: 0.1,
            noise_rate_hz: 0.1,
            scene_seed: 7,
            rects_per_place: 10,
            appearance_change: 0.1,
            start_jitter_m: 3.0,
            vertical_jitter_px: 2,
            lateral_jitter_px: 0,
            pose_rate_hz: 20.0,
            half_window_us: 600_000,
            traverses: vec![
                t(0.5, Direction::Forward, Role::Train),
                t(0.75, Direction::Forward, Role::Train),
                t(1.0, Direction::Forward, Role::Train),
                t(1.5, Direction::Reverse, Role::Test),
            ],
        }
    }
}

impl RouteConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_places < 2 {
            return bad(format!("synth.n_places must be at least 2, got {}", self.n_places));
        }
        for (name, v) in [
            ("spacing_m", self.spacing_m),
            ("px_per_m", self.px_per_m),
            ("base_speed_mps", self.base_speed_mps),
            ("pose_rate_hz", self.pose_rate_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("synth.{name} must be positive"));
            }
        }
        for (name, v) in [
            ("lead_m", self.lead_m),
            ("noise_rate_hz", self.noise_rate_hz),
            ("start_jitter_m", self.start_jitter_m),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("synth.{name} must be non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.speed_wobble) {
            return bad("synth.speed_wobble must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.appearance_change) {
            return bad("synth.appearance_change must lie in [0, 1]".into());
        }
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return bad("synth sensor geometry must be within 1..=4096".into());
        }
        if self.half_window_us == 0 {
            return bad("synth.half_window_us must be positive".into());
        }
        if self.traverses.is_empty() {
            return bad("synth.traverses must not be empty".into());
        }
        if let Some(t) = self.traverses.iter().find(|t| !(t.speed_factor > 0.0 && t.speed_factor.is_finite())) {
            return bad(format!("traverse speed factor must be positive, got {}", t.speed_factor));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.width, self.height)
    }

    /// Total route length driven by each traverse.
    pub fn route_length_m(&self) -> f64 {
        2.0 * self.lead_m + (self.n_places - 1) as f64 * self.spacing_m
    }

    fn margin_m(&self) -> f64 {
        self.start_jitter_m + 1.0 + f64::from(self.lateral_jitter_px) / self.px_per_m
    }

    fn world_height(&self) -> usize {
        self.height as usize + 2 * self.vertical_jitter_px as usize
    }

    fn world_width(&self) -> usize {
        ((self.route_length_m() + 2.0 * self.margin_m()) * self.px_per_m).ceil() as usize + self.width as usize + 1
    }
}

/// A binary image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Texture {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Texture {
    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[bool] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    fn xor_rect(&mut self, r: &Rect) {
        for y in r.y0..(r.y0 + r.h).min(self.height) {
            for x in r.x0..(r.x0 + r.w).min(self.width) {
                let v = &mut self.data[y * self.width + x];
                *v = !*v;
            }
        }
    }

    pub fn mirrored(&self) -> Texture {
        let mut out = self.clone();
        for y in 0..self.height {
            out.data[y * self.width..(y + 1) * self.width].reverse();
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Rect {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

fn random_rects(rng: &mut impl Rng, x_lo: usize, x_hi: usize, height: usize, count: usize) -> Vec<Rect> {
    (0..count)
        .map(|_| Rect {
            x0: rng.random_range(x_lo.saturating_sub(2)..x_hi.max(x_lo + 1)),
            y0: rng.random_range(0..height),
            w: rng.random_range(3..=10),
            h: rng.random_range(4..=(height / 2).max(4)),
        })
        .collect()
}

/// Renders events for a camera whose left column follows `path`, a list
/// of `(t_us, column)` samples with non-decreasing time. Pixel `(x, y)`
/// shows `world[y + dy][column + x]`.
pub fn render(
    world: &Texture,
    path: &[(u64, usize)],
    geometry: Geometry,
    dy: usize,
    noise_rate_hz: f64,
    seed: u64,
) -> Result<EventStream> {
    let (w, h) = (geometry.width as usize, geometry.height as usize);
    if dy + h > world.height {
        return Err(Error::InvalidConfig("view does not fit inside the world texture".into()));
    }
    if path.iter().any(|&(_, c)| c + w > world.width) {
        return Err(Error::InvalidConfig("camera path leaves the world texture".into()));
    }
    let mut rng = rng_from(seed);
    let mut events = Vec::new();
    let jitter_us = 1000u64;
    for pair in path.windows(2) {
        let ((t0, c0), (t1, c1)) = (pair[0], pair[1]);
        let mut c = c0;
        while c != c1 {
            let next = if c1 > c { c + 1 } else { c - 1 };
            for y in 0..h {
                let row = world.row(y + dy);
                for x in 0..w {
                    let (old, new) = (row[c + x], row[next + x]);
                    if old != new {
                        let p = if new { Polarity::On } else { Polarity::Off };
                        let t = t1 + rng.random_range(0..jitter_us);
                        events.push(Event::new(t, x as u16, y as u16, p));
                    }
                }
            }
            c = next;
        }
        if noise_rate_hz > 0.0 && t1 > t0 {
            let lambda = noise_rate_hz * (w * h) as f64 * (t1 - t0) as f64 * 1e-6;
            let count = Poisson::new(lambda).map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
            for _ in 0..count {
                let p = if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
                events.push(Event::new(
                    rng.random_range(t0..t1),
                    rng.random_range(0..w) as u16,
                    rng.random_range(0..h) as u16,
                    p,
                ));
            }
        }
    }
    Ok(EventStream::from_unsorted(geometry, events)?.0)
}

/// One generated traverse.
#[derive(Clone, Debug)]
pub struct SynthTraverse {
    pub id: u32,
    pub spec: TraverseSpec,
    /// True position of the first pose relative to the nominal route start.
    pub start_offset_m: f64,
    pub stream: EventStream,
    pub track: PoseTrack,
}

/// The rectangles making up the whole world, before per-traverse dropout.
fn scene_rects(cfg: &RouteConfig) -> Vec<Rect> {
    let mut rng = rng_from(derive_seed(cfg.scene_seed, "scene"));
    let seg = cfg.spacing_m * cfg.px_per_m;
    let half_view = cfg.width as f64 / 2.0;
    let margin = cfg.margin_m();
    let center = |k: f64| (cfg.lead_m + k * cfg.spacing_m + margin) * cfg.px_per_m + half_view;
    let world_w = cfg.world_width();
    let mut rects = Vec::new();
    // segments tile the world, centered on place views; the extra ones at
    // both ends cover the lead-in and lead-out
    let first = -((center(0.0) / seg).ceil() as i64) - 1;
    let last = cfg.n_places as i64 + ((world_w as f64 - center((cfg.n_places - 1) as f64)) / seg).ceil() as i64 + 1;
    for k in first..=last {
        let c = center(k as f64);
        let lo = (c - seg / 2.0).max(0.0) as usize;
        let hi = ((c + seg / 2.0).max(0.0) as usize).min(world_w);
        if lo >= hi {
            continue;
        }
        rects.extend(random_rects(&mut rng, lo, hi, cfg.world_height(), cfg.rects_per_place));
    }
    rects
}

fn world_texture(cfg: &RouteConfig, rects: &[Rect], keep: impl Fn(usize) -> bool) -> Texture {
    let mut t = Texture::blank(cfg.world_width(), cfg.world_height());
    for (i, r) in rects.iter().enumerate() {
        if keep(i) {
            t.xor_rect(r);
        }
    }
    t
}

fn traverse(cfg: &RouteConfig, rects: &[Rect], id: u32, spec: TraverseSpec, seed: u64) -> Result<SynthTraverse> {
    let mut rng = rng_from(seed);
    let start = if cfg.start_jitter_m > 0.0 {
        rng.random_range(-cfg.start_jitter_m..=cfg.start_jitter_m)
    } else {
        0.0
    };
    let dy = rng.random_range(0..=2 * cfg.vertical_jitter_px as usize);
    let lateral = cfg.lateral_jitter_px as usize;
    let dx = rng.random_range(0..=2 * lateral);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let drops: Vec<bool> = (0..rects.len()).map(|_| rng.random_bool(cfg.appearance_change)).collect();
    let mut world = world_texture(cfg, rects, |i| !drops[i]);

    let ppm = cfg.px_per_m;
    let margin = cfg.margin_m();
    let length = cfg.route_length_m();
    let view_w = cfg.width as usize;
    let world_w = world.width();
    let reverse = spec.direction == Direction::Reverse;
    if reverse {
        world = world.mirrored();
    }
    let position = |d: f64| if reverse { length + start - d } else { start + d };
    let column = |d: f64| {
        let c = ((position(d) + margin) * ppm).floor() as usize + dx - lateral;
        if reverse {
            world_w - view_w - c
        } else {
            c
        }
    };
    let speed = |d: f64| {
        cfg.base_speed_mps * spec.speed_factor * (1.0 + cfg.speed_wobble * (std::f64::consts::TAU * d / 120.0 + phase).sin())
    };

    let step = 0.25 / ppm;
    let pose_dt = 1e6 / cfg.pose_rate_hz;
    let t0 = 1_000_000.0;
    let (mut d, mut t) = (0.0f64, t0);
    let mut path = vec![(t as u64, column(0.0))];
    let mut poses = vec![PoseSample {
        t: t as u64,
        position: Position::Route(position(0.0)),
    }];
    let mut next_pose = t0 + pose_dt;
    while d < length {
        let ds = step.min(length - d);
        t += ds / speed(d + ds / 2.0) * 1e6;
        d += ds;
        let c = column(d);
        if c != path.last().expect("non-empty").1 {
            path.push((t as u64, c));
        }
        while next_pose <= t {
            poses.push(PoseSample {
                t: next_pose as u64,
                position: Position::Route(position(d)),
            });
            next_pose += pose_dt;
        }
    }
    path.push((t as u64, column(length)));
    if poses.last().map(|p| p.t) != Some(t as u64) {
        poses.push(PoseSample {
            t: t as u64,
            position: Position::Route(position(length)),
        });
    }
    let stream = render(
        &world,
        &path,
        cfg.geometry(),
        dy,
        cfg.noise_rate_hz,
        derive_seed(seed, "render"),
    )?;
    Ok(SynthTraverse {
        id,
        spec,
        start_offset_m: start,
        stream,
        track: PoseTrack::new(poses)?,
    })
}

/// Generates every configured traverse; a pure function of `(cfg, seed)`.
pub fn generate(cfg: &RouteConfig, seed: u64) -> Result<Vec<SynthTraverse>> {
    cfg.validate()?;
    let rects = scene_rects(cfg);
    let base = derive_seed(seed, "synth");
    cfg.traverses
        .par_iter()
        .enumerate()
        .map(|(i, spec)| traverse(cfg, &rects, i as u32, *spec, mix(base, i as u64)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AliasConfig {
    pub width: usize,
    pub height: usize,
    /// Fraction of texture rows shared between the two places.
    pub similarity: f64,
    pub rects: usize,
    pub seed: u64,
}

/// Two place textures that share a controlled fraction of their rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AliasPair {
    pub a: Texture,
    pub b: Texture,
}

impl AliasPair {
    /// Noise-free histograms from sweeping a `view_width` camera `shifts`
    /// pixels across each texture.
    pub fn histograms(&self, view_width: usize, shifts: usize) -> Result<(EventHistogram, EventHistogram)> {
        Ok((
            sweep_histogram(&self.a, view_width, shifts)?,
            sweep_histogram(&self.b, view_width, shifts)?,
        ))
    }
}

/// A hard-negative pair: rows of `b` are copied from `a` wherever a fixed
/// per-row uniform draw falls below `similarity`, so the shared row set
/// only grows as similarity rises.
pub fn perceptual_alias_pair(cfg: &AliasConfig) -> Result<AliasPair> {
    if !(0.0..=1.0).contains(&cfg.similarity) {
        return Err(Error::InvalidConfig("alias similarity must lie in [0, 1]".into()));
    }
    if cfg.width == 0 || cfg.height < 4 {
        return Err(Error::InvalidConfig("alias texture too small".into()));
    }
    let mut rng = rng_from(derive_seed(cfg.seed, "alias"));
    let texture = |rng: &mut _| {
        let mut t = Texture::blank(cfg.width, cfg.height);
        for r in random_rects(rng, 0, cfg.width, cfg.height, cfg.rects) {
            t.xor_rect(&r);
        }
        t
    };
    let a = texture(&mut rng);
    let independent = texture(&mut rng);
    let draws: Vec<f64> = (0..cfg.height).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut b = independent;
    for (y, &u) in draws.iter().enumerate() {
        if u < cfg.similarity || cfg.similarity >= 1.0 {
            let w = cfg.width;
            b.data[y * w..(y + 1) * w].copy_from_slice(a.row(y));
        }
    }
    Ok(AliasPair { a, b })
}

/// Noise-free histogram of a camera sweeping `shifts` pixels rightwards
/// from column 0 of `texture`.
pub fn sweep_histogram(texture: &Texture, view_width: usize, shifts: usize) -> Result<EventHistogram> {
    if view_width + shifts > texture.width() {
        return Err(Error::InvalidConfig("sweep leaves the texture".into()));
    }
    let g = Geometry::new(view_width as u32, texture.height() as u32);
    let path: Vec<(u64, usize)> = (0..=shifts).map(|c| (c as u64 * 10_000, c)).collect();
    let stream = render(texture, &path, g, 0, 0.0, 0)?;
    build_histogram(&stream, (0, (shifts as u64 + 1) * 10_000 + 1_000))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::slice_places_from;
    use std::sync::Arc;

    fn small() -> RouteConfig {
        RouteConfig {
            n_places: 4,
            width: 16,
            height: 12,
            traverses: vec![
                TraverseSpec {
                    speed_factor: 1.0,
                    direction: Direction::Forward,
                    role: Role::Train,
                },
                TraverseSpec {
                    speed_factor: 1.0,
                    direction: Direction::Forward,
                    role: Role::Train,
                },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small();
        let a = generate(&cfg, 3).unwrap();
        let b = generate(&cfg, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.stream == y.stream);
            assert!(x.track == y.track);
        }
        assert!(a[0].stream.len() > 100);
    }

    #[test]
    fn identical_settings_give_identical_streams() {
        let mut cfg = small();
        cfg.start_jitter_m = 0.0;
        cfg.vertical_jitter_px = 0;
        cfg.appearance_change = 0.0;
        cfg.noise_rate_hz = 0.0;
        cfg.speed_wobble = 0.0;
        let t = generate(&cfg, 1).unwrap();
        // only the per-event timing jitter differs
        assert_eq!(t[0].stream.len(), t[1].stream.len());
        assert!(EventHistogram::of_stream(&t[0].stream).counts() == EventHistogram::of_stream(&t[1].stream).counts());
    }

    #[test]
    fn lateral_jitter_shifts_the_view_but_not_the_track() {
        let mut cfg = small();
        cfg.noise_rate_hz = 0.0;
        let plain = generate(&cfg, 5).unwrap();
        cfg.lateral_jitter_px = 3;
        let shifted = generate(&cfg, 5).unwrap();
        for (a, b) in plain.iter().zip(&shifted) {
            assert!(a.track == b.track);
            assert!(a.stream != b.stream);
        }
    }

    #[test]
    fn faster_camera_fills_fixed_window_with_more_events() {
        let mut cfg = small();
        cfg.noise_rate_hz = 0.0;
        cfg.start_jitter_m = 0.0;
        cfg.appearance_change = 0.0;
        cfg.vertical_jitter_px = 0;
        cfg.traverses[1].speed_factor = 2.0;
        let t = generate(&cfg, 5).unwrap();
        let half = 400_000;
        let count = |tr: &SynthTraverse| -> u64 {
            let s = Arc::new(tr.stream.clone());
            slice_places_from(&s, &tr.track, cfg.spacing_m, half, tr.id, cfg.lead_m)
                .unwrap()
                .iter()
                .map(|p| build_histogram(&s, p.window).unwrap().total())
                .sum()
        };
        assert!(count(&t[1]) > count(&t[0]));
    }

    #[test]
    fn stationary_camera_without_noise_is_silent() {
        let cfg = small();
        let world = world_texture(&cfg, &scene_rects(&cfg), |_| true);
        let path = vec![(0, 5), (1_000_000, 5), (2_000_000, 5)];
        let s = render(&world, &path, cfg.geometry(), 0, 0.0, 1).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn arc_length_and_window_duration_follow_config() {
        let mut cfg = small();
        cfg.speed_wobble = 0.0;
        let t = generate(&cfg, 2).unwrap();
        let arcs = t[0].track.arc_lengths();
        let step = cfg.base_speed_mps / cfg.pose_rate_hz;
        assert!((arcs.last().unwrap() - cfg.route_length_m()).abs() <= step);
        let s = Arc::new(t[0].stream.clone());
        let places = slice_places_from(&s, &t[0].track, cfg.spacing_m, 1000, 0, cfg.lead_m).unwrap();
        assert_eq!(places.len(), cfg.n_places);
        // consecutive place centres are spacing / speed apart
        let expect = cfg.spacing_m / cfg.base_speed_mps * 1e6;
        for w in places.windows(2) {
            let dt = (w[1].center_us - w[0].center_us) as f64;
            assert!((dt - expect).abs() <= 1e6 / cfg.pose_rate_hz + 1.0, "{dt}");
        }
    }

    #[test]
    fn reverse_traverse_runs_backwards_over_mirrored_scene() {
        let mut cfg = small();
        cfg.noise_rate_hz = 0.0;
        cfg.start_jitter_m = 0.0;
        cfg.appearance_change = 0.0;
        cfg.vertical_jitter_px = 0;
        cfg.speed_wobble = 0.0;
        cfg.traverses[1].direction = Direction::Reverse;
        let t = generate(&cfg, 4).unwrap();
        let first = |tr: &SynthTraverse| match tr.track.samples()[0].position {
            Position::Route(m) => m,
            _ => unreachable!(),
        };
        assert!(first(&t[0]).abs() < 1e-9);
        assert!((first(&t[1]) - cfg.route_length_m()).abs() < 1e-9);
        let fwd = Arc::new(t[0].stream.clone());
        let rev = Arc::new(t[1].stream.clone());
        let pf = slice_places_from(&fwd, &t[0].track, cfg.spacing_m, 300_000, 0, cfg.lead_m).unwrap();
        let pr = slice_places_from(&rev, &t[1].track, cfg.spacing_m, 300_000, 1, cfg.lead_m).unwrap();
        assert_eq!(pf.len(), pr.len());
        // the reverse view of the last place is the mirror of the forward view
        let both = |h: EventHistogram| {
            let c = h.counts();
            let half = c.len() / 2;
            (0..half).map(|i| c[i] + c[i + half]).collect::<Vec<u32>>()
        };
        let hf = both(build_histogram(&fwd, pf[cfg.n_places - 1].window).unwrap());
        let hr = both(build_histogram(&rev, pr[0].window).unwrap().flip_x());
        let overlap: u64 = hf.iter().zip(&hr).map(|(a, b)| (*a).min(*b) as u64).sum();
        let total: u64 = hf.iter().map(|&a| a as u64).sum();
        assert!(overlap as f64 > 0.5 * total as f64, "{overlap} / {total}");
    }

    #[test]
    fn alias_pair_extremes() {
        let cfg = AliasConfig {
            width: 40,
            height: 16,
            similarity: 1.0,
            rects: 12,
            seed: 3,
        };
        let p = perceptual_alias_pair(&cfg).unwrap();
        assert_eq!(p.a, p.b);
        let q = perceptual_alias_pair(&AliasConfig { similarity: 0.0, ..cfg }).unwrap();
        assert_eq!(q.a, p.a);
        assert_ne!(q.a, q.b);
    }

    #[test]
    fn alias_sad_falls_as_similarity_rises() {
        let mut last = u64::MAX;
        for i in 0..=10 {
            let cfg = AliasConfig {
                width: 48,
                height: 16,
                similarity: i as f64 / 10.0,
                rects: 14,
                seed: 11,
            };
            let (a, b) = perceptual_alias_pair(&cfg).unwrap().histograms(24, 16).unwrap();
            let sad = a.sad(&b).unwrap();
            assert!(sad <= last, "similarity {}: {sad} > {last}", cfg.similarity);
            last = sad;
        }
        assert_eq!(last, 0);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small();
        cfg.n_places = 1;
        assert!(generate(&cfg, 0).is_err());
        let mut cfg = small();
        cfg.traverses[0].speed_factor = 0.0;
        assert!(cfg.validate().is_err());
    }
}
