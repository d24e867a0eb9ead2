//! Reference characters: loading stroke polylines, arc-length resampling and
//! mapping into the physical writing workspace.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Point, Scalar};
use crate::trajectory::{uniform_timestamps, SequenceError, WaypointSeq};

pub const CHARACTER_SET_FORMAT: &str = "penmentor-characters";
pub const CHARACTER_SET_VERSION: u32 = 1;

/// Built-in set of fifteen characters, three per stroke count 1 through 5.
pub const BUILTIN_CHARACTERS: &str = include_str!("../data/characters.json");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at line {line}, column {column}, field `{field}`: {message}")]
    Schema {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("degenerate polyline: total length is zero")]
    DegeneratePolyline,
    #[error("cannot normalize: all points identical")]
    UndefinedScale,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// One pen-down stroke as an ordered polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct StrokePolyline<T: Scalar> {
    points: Vec<Point<T>>,
}

impl<T: Scalar> StrokePolyline<T> {
    /// Rejects fewer than two points and zero-length segments.
    pub fn new(points: Vec<Point<T>>) -> Result<Self, CorpusError> {
        if points.len() < 2 {
            return Err(CorpusError::Validation(format!(
                "stroke needs at least 2 points, got {}",
                points.len()
            )));
        }
        for (i, w) in points.windows(2).enumerate() {
            if w[0] == w[1] {
                return Err(CorpusError::Validation(format!(
                    "zero-length segment between points {i} and {}",
                    i + 1
                )));
            }
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(CorpusError::Validation("non-finite coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn arc_length(&self) -> T {
        self.points
            .windows(2)
            .fold(T::zero(), |acc, w| acc + (w[1] - w[0]).norm())
    }
}

/// A reference character: ordered strokes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct CharacterSpec<T: Scalar> {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glyph: Option<String>,
    strokes: Vec<StrokePolyline<T>>,
    /// Drawing frame `[x0, y0, x1, y1]` the strokes live in; when absent
    /// the strokes' bounding box is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<[T; 4]>,
}

impl<T: Scalar> CharacterSpec<T> {
    pub fn new(id: impl Into<String>, strokes: Vec<StrokePolyline<T>>) -> Result<Self, CorpusError> {
        if strokes.is_empty() {
            return Err(CorpusError::Validation("character needs at least one stroke".into()));
        }
        Ok(Self {
            id: id.into(),
            glyph: None,
            strokes,
            frame: None,
        })
    }

    pub fn with_frame(mut self, frame: [T; 4]) -> Self {
        self.frame = Some(frame);
        self
    }

    pub fn strokes(&self) -> &[StrokePolyline<T>] {
        &self.strokes
    }

    pub fn stroke_count(&self) -> usize {
        self.strokes.len()
    }

    /// Per-stroke reference waypoints in workspace meters.
    ///
    /// `n_total` waypoints are split across strokes proportionally to arc
    /// length (at least 2 each); `duration` is split the same way so the pen
    /// moves at one constant nominal speed. Each stroke's timestamps start at 0.
    pub fn reference_waypoints(
        &self,
        n_total: usize,
        duration: T,
        workspace: (T, T),
    ) -> Result<Vec<WaypointSeq<T>>, CorpusError> {
        let fit = match self.frame {
            Some([x0, y0, x1, y1]) => {
                WorkspaceFit::from_bounds(Point::new(x0, y0), Point::new(x1, y1), workspace)?
            }
            None => {
                let all: Vec<_> = self.strokes.iter().flat_map(|s| s.points.iter().copied()).collect();
                WorkspaceFit::from_points(&all, workspace)?
            }
        };
        let strokes: Vec<StrokePolyline<T>> = self
            .strokes
            .iter()
            .map(|s| StrokePolyline {
                points: s.points.iter().map(|p| fit.apply(p)).collect(),
            })
            .collect();
        let lengths: Vec<T> = strokes.iter().map(|s| s.arc_length()).collect();
        let counts = allocate_waypoints(&lengths, n_total)?;
        let total: usize = counts.iter().sum();
        strokes
            .iter()
            .zip(&counts)
            .map(|(s, &n)| {
                let share = duration * T::from_usize_lossy(n) / T::from_usize_lossy(total);
                resample_waypoints(s, n, share)
            })
            .collect()
    }
}

/// Characters keyed by unique id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterSet<T: Scalar> {
    pub units: String,
    characters: Vec<CharacterSpec<T>>,
}

impl<T: Scalar> CharacterSet<T> {
    pub fn new(units: impl Into<String>, characters: Vec<CharacterSpec<T>>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for c in &characters {
            if !seen.insert(c.id.as_str()) {
                return Err(CorpusError::Validation(format!("duplicate character id `{}`", c.id)));
            }
        }
        Ok(Self {
            units: units.into(),
            characters,
        })
    }

    pub fn characters(&self) -> &[CharacterSpec<T>] {
        &self.characters
    }

    pub fn len(&self) -> usize {
        self.characters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.characters.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CharacterSpec<T>> {
        self.characters.iter().find(|c| c.id == id)
    }

    /// Number of characters per stroke count.
    pub fn stroke_count_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for c in &self.characters {
            *hist.entry(c.stroke_count()).or_insert(0) += 1;
        }
        hist
    }

    /// Character ids grouped by stroke count, each group in file order.
    pub fn groups_by_stroke_count(&self) -> BTreeMap<usize, Vec<String>> {
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for c in &self.characters {
            groups.entry(c.stroke_count()).or_default().push(c.id.clone());
        }
        groups
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileHeader {
    format: String,
    version: u32,
    units: String,
    #[serde(default)]
    frame: Option<[f64; 4]>,
    characters: Vec<FileCharacter>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCharacter {
    id: String,
    #[serde(default)]
    glyph: Option<String>,
    strokes: Vec<Vec<[f64; 2]>>,
}

/// Parses a character-set document.
pub fn parse_character_set(text: &str) -> Result<CharacterSet<f64>, CorpusError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let header: FileHeader = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        CorpusError::Schema {
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    if header.format != CHARACTER_SET_FORMAT {
        return Err(CorpusError::Validation(format!(
            "unexpected format `{}` (expected `{CHARACTER_SET_FORMAT}`)",
            header.format
        )));
    }
    if header.version != CHARACTER_SET_VERSION {
        return Err(CorpusError::Validation(format!(
            "unsupported version {} (expected {CHARACTER_SET_VERSION})",
            header.version
        )));
    }
    let mut characters = Vec::with_capacity(header.characters.len());
    for (ci, fc) in header.characters.into_iter().enumerate() {
        let strokes = fc
            .strokes
            .into_iter()
            .enumerate()
            .map(|(si, pts)| {
                StrokePolyline::new(pts.into_iter().map(|[x, y]| Point::new(x, y)).collect()).map_err(
                    |e| CorpusError::Validation(format!("characters[{ci}] `{}` strokes[{si}]: {e}", fc.id)),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut spec = CharacterSpec::new(fc.id.clone(), strokes)
            .map_err(|e| CorpusError::Validation(format!("characters[{ci}] `{}`: {e}", fc.id)))?;
        spec.glyph = fc.glyph;
        spec.frame = header.frame;
        characters.push(spec);
    }
    CharacterSet::new(header.units, characters)
}

pub fn load_character_set(path: impl AsRef<Path>) -> Result<CharacterSet<f64>, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_character_set(&text)
}

pub fn builtin_character_set() -> CharacterSet<f64> {
    parse_character_set(BUILTIN_CHARACTERS).expect("built-in character set is valid")
}

/// Splits `n_total` waypoints across strokes in proportion to their lengths
/// (largest remainder), with a floor of 2 per stroke.
pub fn allocate_waypoints<T: Scalar>(lengths: &[T], n_total: usize) -> Result<Vec<usize>, CorpusError> {
    let k = lengths.len();
    if k == 0 {
        return Err(CorpusError::InvalidArgument("no strokes".into()));
    }
    if n_total < 2 * k {
        return Err(CorpusError::InvalidArgument(format!(
            "{n_total} waypoints cannot cover {k} strokes at 2 each"
        )));
    }
    let total_len = lengths.iter().fold(T::zero(), |a, &b| a + b);
    if total_len <= T::zero() {
        return Err(CorpusError::DegeneratePolyline);
    }
    let spare = n_total - 2 * k;
    let spare_t = T::from_usize_lossy(spare);
    let mut counts = vec![2usize; k];
    let mut remainders = Vec::with_capacity(k);
    let mut used = 0;
    for (i, &len) in lengths.iter().enumerate() {
        let share = spare_t * len / total_len;
        let whole = num_traits::ToPrimitive::to_usize(&share.floor()).unwrap_or(0);
        counts[i] += whole;
        used += whole;
        remainders.push((share - share.floor(), i));
    }
    // Largest remainder first; ties by stroke order.
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(spare - used) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Resamples a polyline to `n` points equally spaced by arc length, with
/// timestamps equally spaced on `[0, duration]`.
pub fn resample_waypoints<T: Scalar>(
    stroke: &StrokePolyline<T>,
    n: usize,
    duration: T,
) -> Result<WaypointSeq<T>, CorpusError> {
    if n < 2 {
        return Err(CorpusError::InvalidArgument(format!("n must be >= 2, got {n}")));
    }
    if !(duration > T::zero()) {
        return Err(CorpusError::InvalidArgument("duration must be positive".into()));
    }
    let points = resample_polyline(stroke.points(), n)?;
    Ok(WaypointSeq::new(uniform_timestamps(n, duration), points)?)
}

/// Resamples a raw point list (repeated points allowed) to `n` points with
/// equal chord length between consecutive outputs, starting and ending on
/// the polyline's end points. Every output point lies on the polyline.
///
/// The chord length is the largest `d` for which walking `n - 1` exits of
/// radius-`d` balls along the polyline still stays on it; it is found by
/// bisection. On a polyline that is already equally spaced this reproduces
/// the input. Hairpin turns can leave no exact solution, in which case the
/// points are spaced equally along the path instead.
pub fn resample_polyline<T: Scalar>(points: &[Point<T>], n: usize) -> Result<Vec<Point<T>>, CorpusError> {
    if points.len() < 2 || n < 2 {
        return Err(CorpusError::DegeneratePolyline);
    }
    let total = points
        .windows(2)
        .fold(T::zero(), |acc, w| acc + (w[1] - w[0]).norm());
    if !(total > T::zero()) {
        return Err(CorpusError::DegeneratePolyline);
    }
    let last = points[points.len() - 1];
    if n == 2 {
        return Ok(vec![points[0], last]);
    }
    let steps = n - 1;
    let mut lo = T::zero();
    let mut hi = total / T::from_usize_lossy(steps) * T::lit(1.0 + 1e-9);
    let mut best: Option<Vec<Point<T>>> = None;
    let tol = total * T::lit(4.0) * <T as Scalar>::epsilon();
    for _ in 0..200 {
        let mid = (lo + hi) * T::lit(0.5);
        match chord_walk(points, mid, steps) {
            Some(walk) => {
                lo = mid;
                let done = (walk[steps] - last).norm() <= tol;
                best = Some(walk);
                if done {
                    break;
                }
            }
            None => hi = mid,
        }
        if hi - lo <= tol * T::lit(1e-3) {
            break;
        }
    }
    match best {
        Some(mut walk) if (walk[steps] - last).norm() <= total * T::lit(1e-9) => {
            walk[steps] = last;
            Ok(walk)
        }
        // Folds sharper than a right angle can make the walk jump past the
        // end; equal spacing along the path is the fallback there.
        _ => Ok(resample_by_arc_length(points, n)),
    }
}

/// Points equally spaced by distance travelled along the polyline.
pub fn resample_by_arc_length<T: Scalar>(points: &[Point<T>], n: usize) -> Vec<Point<T>> {
    let mut cumulative = Vec::with_capacity(points.len());
    cumulative.push(T::zero());
    for w in points.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + (w[1] - w[0]).norm());
    }
    let total = *cumulative.last().unwrap();
    let step = total / T::from_usize_lossy(n - 1);
    let mut out = Vec::with_capacity(n);
    out.push(points[0]);
    let mut seg = 0;
    for i in 1..n - 1 {
        let target = step * T::from_usize_lossy(i);
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let w = if span > T::zero() {
            (target - cumulative[seg]) / span
        } else {
            T::zero()
        };
        out.push(points[seg] * (T::one() - w) + points[seg + 1] * w);
    }
    out.push(points[points.len() - 1]);
    out
}

/// Places `steps` successive points along the polyline, each the first exit
/// of the radius-`d` ball around the previous one. `None` if the walk runs
/// off the end.
fn chord_walk<T: Scalar>(points: &[Point<T>], d: T, steps: usize) -> Option<Vec<Point<T>>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(points[0]);
    let (mut seg, mut u) = (0usize, T::zero());
    let d2 = d * d;
    for _ in 0..steps {
        let center = *out.last().unwrap();
        let mut found = None;
        for j in seg..points.len() - 1 {
            let a = points[j];
            let dir = points[j + 1] - a;
            let qa = dir.norm_squared();
            if qa == T::zero() {
                continue;
            }
            let rel = a - center;
            let qb = dir.dot(&rel);
            let qc = rel.norm_squared() - d2;
            let disc = qb * qb - qa * qc;
            if disc < T::zero() {
                continue;
            }
            // Larger root of qa u^2 + 2 qb u + qc = 0, in a cancellation-free form.
            let root = disc.sqrt();
            let upper = if qb <= T::zero() {
                (root - qb) / qa
            } else {
                -qc / (qb + root)
            };
            let u_min = if j == seg { u } else { T::zero() };
            if upper >= u_min && upper <= T::one() {
                found = Some((j, upper, a + dir * upper));
                break;
            }
        }
        let (j, uu, p) = found?;
        seg = j;
        u = uu;
        out.push(p);
    }
    Some(out)
}

/// Uniform scale plus translation that centers a bounding box in the
/// workspace `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceFit<T: Scalar> {
    pub scale: T,
    pub offset: Point<T>,
}

impl<T: Scalar> WorkspaceFit<T> {
    pub fn from_points(points: &[Point<T>], workspace: (T, T)) -> Result<Self, CorpusError> {
        if points.is_empty() {
            return Err(CorpusError::UndefinedScale);
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Self::from_bounds(lo, hi, workspace)
    }

    pub fn from_bounds(lo: Point<T>, hi: Point<T>, (width, height): (T, T)) -> Result<Self, CorpusError> {
        if !(width > T::zero() && height > T::zero()) {
            return Err(CorpusError::InvalidArgument("workspace dimensions must be positive".into()));
        }
        let extent = hi - lo;
        let scale = match (extent.x > T::zero(), extent.y > T::zero()) {
            (true, true) => (width / extent.x).min(height / extent.y),
            (true, false) => width / extent.x,
            (false, true) => height / extent.y,
            (false, false) => return Err(CorpusError::UndefinedScale),
        };
        let half = T::lit(0.5);
        let margin = Point::new(
            (width - extent.x * scale) * half,
            (height - extent.y * scale) * half,
        );
        Ok(Self {
            scale,
            offset: margin - lo * scale,
        })
    }

    #[inline]
    pub fn apply(&self, p: &Point<T>) -> Point<T> {
        p * self.scale + self.offset
    }
}

/// Maps a sequence into the workspace with a uniform, centered scale.
pub fn normalize_to_workspace<T: Scalar>(
    seq: &WaypointSeq<T>,
    workspace: (T, T),
) -> Result<WaypointSeq<T>, CorpusError> {
    let fit = WorkspaceFit::from_points(seq.points(), workspace)?;
    Ok(seq.map_points(|p| fit.apply(p)))
}
