//! Closed time intervals on a video timeline and temporal IoU.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Endpoint tolerance used by [`TimeSpan`] equality, in seconds.
pub const SPAN_EQ_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpanError {
    #[error("span endpoints must be finite (got {start}, {end})")]
    NonFinite { start: f64, end: f64 },
    #[error("span start must be non-negative (got {0})")]
    Negative(f64),
    #[error("span has zero length at {0}")]
    ZeroLength(f64),
    #[error("span start {start} is after end {end}")]
    Reversed { start: f64, end: f64 },
}

/// A grounding segment `(start, end)` in seconds with `0 <= start < end`.
///
/// Endpoints are stored exactly as given. Equality compares endpoints at
/// [`SPAN_EQ_TOLERANCE`].
#[derive(Debug, Clone, Copy)]
pub struct TimeSpan {
    start: f64,
    end: f64,
}

impl TimeSpan {
    pub fn new(start: f64, end: f64) -> Result<Self, SpanError> {
        if !start.is_finite() || !end.is_finite() {
            return Err(SpanError::NonFinite { start, end });
        }
        if start < 0.0 {
            return Err(SpanError::Negative(start));
        }
        if start == end {
            return Err(SpanError::ZeroLength(start));
        }
        if start > end {
            return Err(SpanError::Reversed { start, end });
        }
        Ok(Self { start, end })
    }

    /// Builds a span from a possibly reversed pair, reporting whether the
    /// endpoints were swapped.
    pub fn from_unordered(a: f64, b: f64) -> Result<(Self, bool), SpanError> {
        if a > b {
            Self::new(b, a).map(|s| (s, true))
        } else {
            Self::new(a, b).map(|s| (s, false))
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Length of the overlap with `other`; zero for touching or disjoint spans.
    pub fn intersection(&self, other: &TimeSpan) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    /// Total covered length of both spans.
    pub fn union(&self, other: &TimeSpan) -> f64 {
        self.length() + other.length() - self.intersection(other)
    }

    pub fn iou(&self, other: &TimeSpan) -> f64 {
        temporal_iou(self, other)
    }

    pub fn contains(&self, other: &TimeSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Copy with `end` clamped to `limit`. Fails if that collapses the span.
    pub fn clamp_end(&self, limit: f64) -> Result<Self, SpanError> {
        Self::new(self.start, self.end.min(limit))
    }

    /// Span rounded to one decimal place, the canonical on-disk precision.
    /// Spans that would collapse under rounding are returned unchanged.
    pub fn canonical(&self) -> Self {
        let start = round_tenth(self.start);
        let end = round_tenth(self.end);
        Self::new(start, end).unwrap_or(*self)
    }
}

pub(crate) fn round_tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl PartialEq for TimeSpan {
    fn eq(&self, other: &Self) -> bool {
        (self.start - other.start).abs() <= SPAN_EQ_TOLERANCE
            && (self.end - other.end).abs() <= SPAN_EQ_TOLERANCE
    }
}

impl fmt::Display for TimeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.1}, {:.1}]", self.start, self.end)
    }
}

/// Intersection over union of two spans, in `[0, 1]`.
///
/// The union is the total covered length, so disjoint spans give
/// `0 / (|a| + |b|)`.
pub fn temporal_iou(a: &TimeSpan, b: &TimeSpan) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.union(b);
    (inter / union).clamp(0.0, 1.0)
}

impl Serialize for TimeSpan {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.start, self.end].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TimeSpan {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [start, end] = <[f64; 2]>::deserialize(deserializer)?;
        TimeSpan::new(start, end).map_err(serde::de::Error::custom)
    }
}
