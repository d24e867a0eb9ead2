//! Time-indexed planar point sequences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Point, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum SequenceError {
    #[error("timestamps ({timestamps}) and points ({points}) differ in length")]
    LengthMismatch { timestamps: usize, points: usize },
    #[error("timestamps must be strictly increasing (index {index})")]
    NotIncreasing { index: usize },
    #[error("sequence is empty")]
    Empty,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
}

/// Waypoints of one stroke: strictly increasing timestamps (seconds) paired
/// with planar points (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct WaypointSeq<T: Scalar> {
    timestamps: Vec<T>,
    points: Vec<Point<T>>,
}

impl<T: Scalar> WaypointSeq<T> {
    pub fn new(timestamps: Vec<T>, points: Vec<Point<T>>) -> Result<Self, SequenceError> {
        if timestamps.len() != points.len() {
            return Err(SequenceError::LengthMismatch {
                timestamps: timestamps.len(),
                points: points.len(),
            });
        }
        if timestamps.is_empty() {
            return Err(SequenceError::Empty);
        }
        for (i, (t, p)) in timestamps.iter().zip(&points).enumerate() {
            if !(t.is_finite() && p.x.is_finite() && p.y.is_finite()) {
                return Err(SequenceError::NonFinite { index: i });
            }
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SequenceError::NotIncreasing { index: i + 1 });
        }
        Ok(Self { timestamps, points })
    }

    /// Points spread uniformly over `[0, duration]`.
    pub fn uniform(points: Vec<Point<T>>, duration: T) -> Result<Self, SequenceError> {
        let ts = uniform_timestamps(points.len(), duration);
        Self::new(ts, points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn timestamps(&self) -> &[T] {
        &self.timestamps
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn duration(&self) -> T {
        *self.timestamps.last().unwrap() - self.timestamps[0]
    }

    /// Same timestamps, new points.
    pub fn with_points(&self, points: Vec<Point<T>>) -> Result<Self, SequenceError> {
        Self::new(self.timestamps.clone(), points)
    }

    /// Linear interpolation in time, clamped to the end points.
    pub fn position_at(&self, t: T) -> Point<T> {
        interpolate(&self.timestamps, &self.points, t)
    }

    pub fn map_points(&self, f: impl Fn(&Point<T>) -> Point<T>) -> Self {
        Self {
            timestamps: self.timestamps.clone(),
            points: self.points.iter().map(f).collect(),
        }
    }

    /// Total polyline length.
    pub fn arc_length(&self) -> T {
        self.points
            .windows(2)
            .fold(T::zero(), |acc, w| acc + (w[1] - w[0]).norm())
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<Point<T>>) {
        (self.timestamps, self.points)
    }
}

/// `n` timestamps equally spaced on `[0, duration]`.
pub fn uniform_timestamps<T: Scalar>(n: usize, duration: T) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![T::zero()],
        _ => {
            let step = duration / T::from_usize_lossy(n - 1);
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        duration
                    } else {
                        step * T::from_usize_lossy(i)
                    }
                })
                .collect()
        }
    }
}

/// Piecewise-linear interpolation of `points` sampled at increasing `times`.
pub fn interpolate<T: Scalar>(times: &[T], points: &[Point<T>], t: T) -> Point<T> {
    debug_assert_eq!(times.len(), points.len());
    let n = times.len();
    if t <= times[0] {
        return points[0];
    }
    if t >= times[n - 1] {
        return points[n - 1];
    }
    // First index with times[i] > t.
    let hi = times.partition_point(|&s| s <= t);
    let lo = hi - 1;
    let span = times[hi] - times[lo];
    let w = (t - times[lo]) / span;
    points[lo] * (T::one() - w) + points[hi] * w
}

/// Centroid of a point set.
pub fn centroid<T: Scalar>(points: &[Point<T>]) -> Point<T> {
    let sum = points.iter().fold(Point::zeros(), |acc, p| acc + p);
    sum / T::from_usize_lossy(points.len().max(1))
}

/// Cubic Hermite interpolation through waypoints with finite-difference
/// tangents (one-sided at the ends). Position and velocity are continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteSpline<T: Scalar> {
    times: Vec<T>,
    points: Vec<Point<T>>,
    tangents: Vec<Point<T>>,
}

/// Position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineState<T: Scalar> {
    pub position: Point<T>,
    pub velocity: Point<T>,
    pub acceleration: Point<T>,
}

impl<T: Scalar> HermiteSpline<T> {
    pub fn new(seq: &WaypointSeq<T>) -> Self {
        let (times, points) = (seq.timestamps().to_vec(), seq.points().to_vec());
        let n = points.len();
        let tangents = (0..n)
            .map(|i| match n {
                1 => Point::zeros(),
                _ if i == 0 => (points[1] - points[0]) / (times[1] - times[0]),
                _ if i == n - 1 => (points[n - 1] - points[n - 2]) / (times[n - 1] - times[n - 2]),
                _ => (points[i + 1] - points[i - 1]) / (times[i + 1] - times[i - 1]),
            })
            .collect();
        Self {
            times,
            points,
            tangents,
        }
    }

    /// Clamped to the end points (with zero velocity outside the span).
    pub fn eval(&self, t: T) -> SplineState<T> {
        let n = self.times.len();
        let rest = |p: Point<T>| SplineState {
            position: p,
            velocity: Point::zeros(),
            acceleration: Point::zeros(),
        };
        if n == 1 || t < self.times[0] {
            return rest(self.points[0]);
        }
        if t > self.times[n - 1] {
            return rest(self.points[n - 1]);
        }
        let hi = self.times.partition_point(|&s| s <= t).clamp(1, n - 1);
        let lo = hi - 1;
        let h = self.times[hi] - self.times[lo];
        let s = (t - self.times[lo]) / h;
        let (p0, p1) = (self.points[lo], self.points[hi]);
        let (m0, m1) = (self.tangents[lo] * h, self.tangents[hi] * h);
        let c = |v: f64| T::lit(v);
        let (s2, s3) = (s * s, s * s * s);
        let position = p0 * (c(2.0) * s3 - c(3.0) * s2 + T::one())
            + m0 * (s3 - c(2.0) * s2 + s)
            + p1 * (c(3.0) * s2 - c(2.0) * s3)
            + m1 * (s3 - s2);
        let velocity = (p0 * (c(6.0) * s2 - c(6.0) * s)
            + m0 * (c(3.0) * s2 - c(4.0) * s + T::one())
            + p1 * (c(6.0) * s - c(6.0) * s2)
            + m1 * (c(3.0) * s2 - c(2.0) * s))
            / h;
        let acceleration = (p0 * (c(12.0) * s - c(6.0))
            + m0 * (c(6.0) * s - c(4.0))
            + p1 * (c(6.0) - c(12.0) * s)
            + m1 * (c(6.0) * s - c(2.0)))
            / (h * h);
        SplineState {
            position,
            velocity,
            acceleration,
        }
    }
}
