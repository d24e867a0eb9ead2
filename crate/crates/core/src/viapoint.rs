//! Curvature-based compression of reference strokes into via-points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Point, Scalar};
use crate::trajectory::WaypointSeq;

#[derive(Debug, Error, PartialEq)]
pub enum ViaPointError {
    #[error("curvature needs at least 3 waypoints, got {0}")]
    TooShort(usize),
    #[error("h must be at least 1")]
    ZeroCount,
    #[error("h = {h} is too large for {n} waypoints (at most {max})")]
    TooMany { h: usize, n: usize, max: usize },
    #[error("no strokes given")]
    NoStrokes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CurvatureMode {
    /// `|ẋÿ − ẏẍ| / (ẋ² + ẏ²)^{3/2}` on the index grid.
    #[default]
    Parametric,
    /// `|ẍ| / (1 + ẋ²)^{3/2}` per axis against time, combined by Euclidean norm.
    PerAxis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureProfile<T: Scalar> {
    /// One value per waypoint; endpoints are 0.
    pub values: Vec<T>,
    /// Interior indices where the local speed vanished.
    pub zero_speed: Vec<usize>,
}

pub fn curvature_profile<T: Scalar>(seq: &WaypointSeq<T>) -> Result<CurvatureProfile<T>, ViaPointError> {
    curvature_profile_with(seq, CurvatureMode::Parametric)
}

pub fn curvature_profile_with<T: Scalar>(
    seq: &WaypointSeq<T>,
    mode: CurvatureMode,
) -> Result<CurvatureProfile<T>, ViaPointError> {
    let n = seq.len();
    if n < 3 {
        return Err(ViaPointError::TooShort(n));
    }
    let p = seq.points();
    let ts = seq.timestamps();
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut values = vec![T::zero(); n];
    let mut zero_speed = Vec::new();
    for i in 1..n - 1 {
        let d1 = (p[i + 1] - p[i - 1]) * half;
        let d2 = p[i + 1] - p[i] * two + p[i - 1];
        let speed2 = d1.norm_squared();
        if speed2 <= T::zero() {
            zero_speed.push(i);
            continue;
        }
        values[i] = match mode {
            CurvatureMode::Parametric => {
                let cross = d1.x * d2.y - d1.y * d2.x;
                // Acceleration parallel to velocity is a straight run.
                if cross.abs() <= T::lit(1e-9) * d1.norm() * d2.norm() {
                    T::zero()
                } else {
                    cross.abs() / (speed2 * speed2.sqrt())
                }
            }
            CurvatureMode::PerAxis => {
                let h = (ts[i + 1] - ts[i - 1]) * half;
                let v: Point<T> = d1 / h;
                let a: Point<T> = d2 / (h * h);
                let one = T::one();
                let kx = a.x.abs() / (one + v.x * v.x).powf(T::lit(1.5));
                let ky = a.y.abs() / (one + v.y * v.y).powf(T::lit(1.5));
                (kx * kx + ky * ky).sqrt()
            }
        };
    }
    Ok(CurvatureProfile { values, zero_speed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ViaPoint<T: Scalar> {
    pub t: T,
    pub point: Point<T>,
    pub source_index: usize,
}

/// Via-points of one stroke, sorted by time; endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ViaPointSet<T: Scalar> {
    pub entries: Vec<ViaPoint<T>>,
    /// Number of interior (curvature) picks.
    pub h: usize,
    pub zero_speed: Vec<usize>,
}

impl<T: Scalar> ViaPointSet<T> {
    /// Curvature picks, without the two endpoints.
    pub fn interior(&self) -> impl Iterator<Item = &ViaPoint<T>> {
        self.entries[1..self.entries.len() - 1].iter()
    }

    pub fn times(&self) -> Vec<T> {
        self.entries.iter().map(|v| v.t).collect()
    }

    pub fn points(&self) -> Vec<Point<T>> {
        self.entries.iter().map(|v| v.point).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ViaPointOptions {
    pub mode: CurvatureMode,
    /// Minimum index separation between interior picks; `⌈N/(2h)⌉` when unset.
    pub radius: Option<usize>,
}

pub fn suppression_radius(n: usize, h: usize) -> usize {
    n.div_ceil(2 * h.max(1))
}

pub fn extract_via_points<T: Scalar>(seq: &WaypointSeq<T>, h: usize) -> Result<ViaPointSet<T>, ViaPointError> {
    extract_via_points_with(seq, h, &ViaPointOptions::default())
}

pub fn extract_via_points_with<T: Scalar>(
    seq: &WaypointSeq<T>,
    h: usize,
    opts: &ViaPointOptions,
) -> Result<ViaPointSet<T>, ViaPointError> {
    let mut sets = extract_character_via_points(std::slice::from_ref(seq), h, opts)?;
    Ok(sets.pop().expect("one stroke in, one set out"))
}

/// Ranks interior waypoints of all strokes together and keeps the `h` best,
/// suppressing picks closer than the radius within a stroke. `N` for the
/// default radius and the `h ≤ N/4` bound is the total waypoint count.
pub fn extract_character_via_points<T: Scalar>(
    strokes: &[WaypointSeq<T>],
    h: usize,
    opts: &ViaPointOptions,
) -> Result<Vec<ViaPointSet<T>>, ViaPointError> {
    if strokes.is_empty() {
        return Err(ViaPointError::NoStrokes);
    }
    if h == 0 {
        return Err(ViaPointError::ZeroCount);
    }
    let n_total: usize = strokes.iter().map(|s| s.len()).sum();
    let interior_total: usize = strokes.iter().map(|s| s.len().saturating_sub(2)).sum();
    let max = (n_total / 4).min(interior_total);
    if h > max {
        return Err(ViaPointError::TooMany { h, n: n_total, max });
    }
    let radius = opts.radius.unwrap_or_else(|| suppression_radius(n_total, h)).max(1);

    let profiles = strokes
        .iter()
        .map(|s| curvature_profile_with(s, opts.mode))
        .collect::<Result<Vec<_>, _>>()?;
    // (stroke, index, kappa) in global index order so a stable sort breaks
    // ties by lower index.
    let mut candidates: Vec<(usize, usize, T)> = profiles
        .iter()
        .enumerate()
        .flat_map(|(s, prof)| {
            let n = prof.values.len();
            (1..n - 1).map(move |i| (s, i, prof.values[i]))
        })
        .collect();
    candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal));

    let mut picks: Vec<Vec<usize>> = vec![Vec::new(); strokes.len()];
    let mut chosen = 0;
    for (s, i, _) in candidates {
        if chosen == h {
            break;
        }
        if picks[s].iter().all(|&j| i.abs_diff(j) >= radius) {
            picks[s].push(i);
            chosen += 1;
        }
    }

    Ok(strokes
        .iter()
        .zip(picks)
        .zip(profiles)
        .map(|((seq, mut idx), prof)| {
            let interior = idx.len();
            idx.push(0);
            idx.push(seq.len() - 1);
            idx.sort_unstable();
            let entries = idx
                .into_iter()
                .map(|i| ViaPoint {
                    t: seq.timestamps()[i],
                    point: seq.points()[i],
                    source_index: i,
                })
                .collect();
            ViaPointSet {
                entries,
                h: interior,
                zero_speed: prof.zero_speed,
            }
        })
        .collect())
}
