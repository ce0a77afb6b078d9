use super::{Event, EventStream, Geometry};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-polarity integer count grid `[2, height, width]`; channel 0 is ON,
/// channel 1 is OFF. Counts are never normalized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventHistogram {
    geometry: Geometry,
    counts: Vec<u32>,
    window: (u64, u64),
}

impl EventHistogram {
    pub fn zeros(geometry: Geometry, window: (u64, u64)) -> Self {
        Self {
            geometry,
            counts: vec![0; 2 * geometry.pixels()],
            window,
        }
    }

    pub fn from_counts(geometry: Geometry, window: (u64, u64), counts: Vec<u32>) -> Result<Self> {
        if counts.len() != 2 * geometry.pixels() {
            return Err(Error::Shape(format!(
                "histogram needs {} counts, got {}",
                2 * geometry.pixels(),
                counts.len()
            )));
        }
        Ok(Self {
            geometry,
            counts,
            window,
        })
    }

    /// Accumulates every given event, regardless of time.
    pub fn from_events(geometry: Geometry, window: (u64, u64), events: &[Event]) -> Self {
        let mut h = Self::zeros(geometry, window);
        let (w, plane) = (geometry.width as usize, geometry.pixels());
        for e in events {
            h.counts[e.p.channel() * plane + e.y as usize * w + e.x as usize] += 1;
        }
        h
    }

    /// Histogram of a whole stream; the window spans its first to last event.
    pub fn of_stream(stream: &EventStream) -> Self {
        let window = match stream.time_span() {
            Some((a, b)) => (a, b + 1),
            None => (0, 1),
        };
        Self::from_events(stream.geometry(), window, stream.events())
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn window(&self) -> (u64, u64) {
        self.window
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> u32 {
        let w = self.geometry.width as usize;
        self.counts[channel * self.geometry.pixels() + y * w + x]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn channel_total(&self, channel: usize) -> u64 {
        let plane = self.geometry.pixels();
        self.counts[channel * plane..(channel + 1) * plane]
            .iter()
            .map(|&c| u64::from(c))
            .sum()
    }

    /// Element-wise sum; the window becomes the union hull of both windows.
    pub fn merged(&self, other: &EventHistogram) -> Result<EventHistogram> {
        if self.geometry != other.geometry {
            return Err(Error::GeometryMismatch(format!(
                "{:?} vs {:?}",
                self.geometry, other.geometry
            )));
        }
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            geometry: self.geometry,
            counts,
            window: (
                self.window.0.min(other.window.0),
                self.window.1.max(other.window.1),
            ),
        })
    }

    /// Mirrors every row: `out[c][y][x] = in[c][y][width - 1 - x]`.
    pub fn flip_x(&self) -> EventHistogram {
        let w = self.geometry.width as usize;
        let mut counts = self.counts.clone();
        for row in counts.chunks_mut(w) {
            row.reverse();
        }
        Self {
            counts,
            ..self.clone()
        }
    }

    /// Counts as a `[2, H, W]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (h, w) = (self.geometry.height as usize, self.geometry.width as usize);
        Tensor::from_vec(
            vec![2, h, w],
            self.counts.iter().map(|&c| T::from_u32(c).unwrap()).collect(),
        )
        .expect("histogram shape")
    }

    /// Counts as `f64`, flattened channel-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| f64::from(c)).collect()
    }

    /// Sum of absolute differences over every cell and channel.
    pub fn sad(&self, other: &EventHistogram) -> Result<u64> {
        if self.geometry != other.geometry {
            return Err(Error::GeometryMismatch(format!(
                "{:?} vs {:?}",
                self.geometry, other.geometry
            )));
        }
        Ok(self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(&a, &b)| u64::from(a.abs_diff(b)))
            .sum())
    }
}

/// Counts events with `start <= t < end` per polarity and pixel. An empty
/// window yields an all-zero histogram.
pub fn build_histogram(stream: &EventStream, window: (u64, u64)) -> Result<EventHistogram> {
    let (start, end) = window;
    if start >= end {
        return Err(Error::InvalidWindow { start, end });
    }
    Ok(EventHistogram::from_events(
        stream.geometry(),
        window,
        stream.window(start, end),
    ))
}
