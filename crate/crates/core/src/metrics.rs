//! Writing similarity scores and summary statistics.

use crate::dtw::{dtw_align, DtwError};
use crate::scalar::{Point, Scalar};
use crate::trajectory::{centroid, WaypointSeq};

/// Centroid-aligned DTW cost per matched pair.
pub fn metric_m1<T: Scalar>(written: &[Point<T>], reference: &[Point<T>]) -> Result<T, DtwError> {
    let cw = centroid(written);
    let cr = centroid(reference);
    let a: Vec<Point<T>> = written.iter().map(|p| p - cw).collect();
    let b: Vec<Point<T>> = reference.iter().map(|p| p - cr).collect();
    Ok(dtw_align(&a, &b)?.normalized())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokeScore<T: Scalar> {
    pub value: T,
    /// Stroke counts differed; only the common prefix was compared.
    pub stroke_count_mismatch: bool,
}

/// Mean over strokes of the start-aligned DTW cost per matched pair.
pub fn metric_m2<T: Scalar>(
    written: &[WaypointSeq<T>],
    reference: &[WaypointSeq<T>],
) -> Result<StrokeScore<T>, DtwError> {
    let count = written.len().min(reference.len());
    if count == 0 {
        return Err(DtwError::Empty(written.len(), reference.len()));
    }
    let mut total = T::zero();
    for (w, r) in written.iter().zip(reference).take(count) {
        let (w0, r0) = (w.points()[0], r.points()[0]);
        let a: Vec<Point<T>> = w.points().iter().map(|p| p - w0).collect();
        let b: Vec<Point<T>> = r.points().iter().map(|p| p - r0).collect();
        total += dtw_align(&a, &b)?.normalized();
    }
    Ok(StrokeScore {
        value: total / T::from_usize_lossy(count),
        stroke_count_mismatch: written.len() != reference.len(),
    })
}

/// `100 · (mean(pre) − mean(post)) / mean(pre)`; `None` when either side
/// is empty or the pre-test mean is zero.
pub fn improvement_percent<T: Scalar>(pre: &[T], post: &[T]) -> Option<T> {
    let before = mean(pre)?;
    let after = mean(post)?;
    if before == T::zero() {
        return None;
    }
    Some(T::lit(100.0) * (before - after) / before)
}

/// Mean Euclidean norm of a force series; 0 when empty.
pub fn mean_interaction_force<T: Scalar>(forces: &[Point<T>]) -> T {
    mean(&forces.iter().map(|f| f.norm()).collect::<Vec<_>>()).unwrap_or_else(T::zero)
}

pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(values.len()))
}

/// Sample standard deviation (`n − 1`); 0 for fewer than two values.
pub fn std_dev<T: Scalar>(values: &[T]) -> T {
    let Some(m) = mean(values) else {
        return T::zero();
    };
    if values.len() < 2 {
        return T::zero();
    }
    let ss = values.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m));
    (ss / T::from_usize_lossy(values.len() - 1)).sqrt()
}

/// Least-squares slope of `values` against `0, 1, 2, …`.
pub fn trend_slope<T: Scalar>(values: &[T]) -> Option<T> {
    if values.len() < 2 {
        return None;
    }
    let n = T::from_usize_lossy(values.len());
    let xs: Vec<T> = (0..values.len()).map(T::from_usize_lossy).collect();
    let mx = xs.iter().fold(T::zero(), |a, &b| a + b) / n;
    let my = mean(values)?;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(values) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    Some(sxy / sxx)
}
