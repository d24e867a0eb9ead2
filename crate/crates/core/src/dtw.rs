//! Dynamic time warping between planar point sequences.
//!
//! Symmetric step set `{(1,0), (0,1), (1,1)}`, Euclidean local cost, no
//! window. When several predecessors tie during traceback the diagonal wins,
//! then the step that advanced the first sequence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Point, Scalar};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DtwError {
    #[error("dtw needs non-empty sequences (got lengths {0} and {1})")]
    Empty(usize, usize),
    #[error("deviation profile needs equal lengths, got {writing} writing vs {reference} reference points")]
    LengthMismatch { writing: usize, reference: usize },
}

/// Optimal warping: cumulative Euclidean cost and the index path.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment<T: Scalar> {
    pub distance: T,
    pub path: Vec<(usize, usize)>,
}

impl<T: Scalar> Alignment<T> {
    /// Cumulative cost divided by the number of matched pairs.
    pub fn normalized(&self) -> T {
        self.distance / T::from_usize_lossy(self.path.len())
    }
}

/// Per-reference-waypoint offset of a writing from the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct DeviationProfile<T: Scalar> {
    pub per_waypoint: Vec<Point<T>>,
}

impl<T: Scalar> DeviationProfile<T> {
    pub fn len(&self) -> usize {
        self.per_waypoint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_waypoint.is_empty()
    }

    /// Mean absolute deviation per axis.
    pub fn mean_abs(&self) -> Point<T> {
        let n = T::from_usize_lossy(self.per_waypoint.len().max(1));
        self.per_waypoint
            .iter()
            .fold(Point::zeros(), |acc, d| acc + d.abs())
            / n
    }

    pub fn concat(profiles: &[DeviationProfile<T>]) -> Self {
        Self {
            per_waypoint: profiles.iter().flat_map(|p| p.per_waypoint.iter().copied()).collect(),
        }
    }
}

/// Cumulative-cost table, row-major `a.len() x b.len()`.
fn cost_table<T: Scalar>(a: &[Point<T>], b: &[Point<T>]) -> Vec<T> {
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            let local = (a[i] - b[j]).norm();
            let best = match (i, j) {
                (0, 0) => T::zero(),
                (0, _) => acc[j - 1],
                (_, 0) => acc[(i - 1) * m],
                _ => {
                    let diag = acc[(i - 1) * m + j - 1];
                    let up = acc[(i - 1) * m + j];
                    let left = acc[i * m + j - 1];
                    diag.min(up).min(left)
                }
            };
            acc[i * m + j] = local + best;
        }
    }
    acc
}

/// Optimal alignment of `a` against `b`.
pub fn dtw_align<T: Scalar>(a: &[Point<T>], b: &[Point<T>]) -> Result<Alignment<T>, DtwError> {
    if a.is_empty() || b.is_empty() {
        return Err(DtwError::Empty(a.len(), b.len()));
    }
    let (n, m) = (a.len(), b.len());
    let acc = cost_table(a, b);
    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    path.push((i, j));
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(Alignment {
        distance: acc[n * m - 1],
        path,
    })
}

/// Cost only; skips the traceback and keeps two rows of memory.
pub fn dtw_distance<T: Scalar>(a: &[Point<T>], b: &[Point<T>]) -> Result<T, DtwError> {
    if a.is_empty() || b.is_empty() {
        return Err(DtwError::Empty(a.len(), b.len()));
    }
    let m = b.len();
    let mut prev = vec![T::zero(); m];
    let mut cur = vec![T::zero(); m];
    for (i, pa) in a.iter().enumerate() {
        for j in 0..m {
            let local = (pa - b[j]).norm();
            let best = match (i, j) {
                (0, 0) => T::zero(),
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j - 1].min(prev[j]).min(cur[j - 1]),
            };
            cur[j] = local + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// For every reference index, the mean of the writing points warped onto it
/// minus the reference point.
pub fn deviation_profile<T: Scalar>(
    writing: &[Point<T>],
    reference: &[Point<T>],
) -> Result<DeviationProfile<T>, DtwError> {
    if writing.len() != reference.len() {
        return Err(DtwError::LengthMismatch {
            writing: writing.len(),
            reference: reference.len(),
        });
    }
    let alignment = dtw_align(writing, reference)?;
    let mut sums = vec![Point::zeros(); reference.len()];
    let mut counts = vec![0usize; reference.len()];
    for &(i, j) in &alignment.path {
        sums[j] += writing[i];
        counts[j] += 1;
    }
    let per_waypoint = sums
        .into_iter()
        .zip(counts)
        .zip(reference)
        .map(|((s, c), r)| s / T::from_usize_lossy(c) - r)
        .collect();
    Ok(DeviationProfile { per_waypoint })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn pts(v: &[(f64, f64)]) -> Vec<Point<f64>> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    /// Every monotone path from (0,0) to (n-1,m-1) with unit steps, and its cost.
    fn enumerate_paths(a: &[Point<f64>], b: &[Point<f64>]) -> Vec<(f64, Vec<(usize, usize)>)> {
        fn rec(
            a: &[Point<f64>],
            b: &[Point<f64>],
            path: &mut Vec<(usize, usize)>,
            cost: f64,
            out: &mut Vec<(f64, Vec<(usize, usize)>)>,
        ) {
            let (i, j) = *path.last().unwrap();
            if i == a.len() - 1 && j == b.len() - 1 {
                out.push((cost, path.clone()));
                return;
            }
            for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
                let (ni, nj) = (i + di, j + dj);
                if ni < a.len() && nj < b.len() {
                    path.push((ni, nj));
                    rec(a, b, path, cost + (a[ni] - b[nj]).norm(), out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(a, b, &mut vec![(0, 0)], (a[0] - b[0]).norm(), &mut out);
        out
    }

    fn path_cost(a: &[Point<f64>], b: &[Point<f64>], path: &[(usize, usize)]) -> f64 {
        path.iter().map(|&(i, j)| (a[i] - b[j]).norm()).sum()
    }

    #[test]
    fn identical_sequences_align_on_the_diagonal() {
        let a = pts(&[(0.0, 0.0), (1.0, 0.5), (2.0, 0.0), (3.0, 1.0)]);
        let r = dtw_align(&a, &a).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.path, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn single_pair_is_euclidean() {
        let r = dtw_align(&pts(&[(0.0, 0.0)]), &pts(&[(3.0, 4.0)])).unwrap();
        assert_eq!(r.distance, 5.0);
        assert_eq!(r.path, vec![(0, 0)]);
    }

    #[test]
    fn three_versus_two_matches_enumeration() {
        let a = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let b = pts(&[(0.0, 0.0), (2.0, 0.0)]);
        let r = dtw_align(&a, &b).unwrap();
        let best = enumerate_paths(&a, &b)
            .into_iter()
            .map(|(c, _)| c)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.distance, best);
        assert_eq!(best, 1.0);
        // Two optimal paths tie; traceback from (2,1) prefers the diagonal into (1,0).
        assert_eq!(r.path, vec![(0, 0), (1, 0), (2, 1)]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(
            dtw_align::<f64>(&[], &pts(&[(0.0, 0.0)])),
            Err(DtwError::Empty(0, 1))
        );
    }

    #[test]
    fn random_short_pairs_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=6);
            let a: Vec<_> = (0..n).map(|_| Point::new(rng.random::<f64>(), rng.random::<f64>())).collect();
            let b: Vec<_> = (0..m).map(|_| Point::new(rng.random::<f64>(), rng.random::<f64>())).collect();
            let all = enumerate_paths(&a, &b);
            let best = all.iter().map(|(c, _)| *c).fold(f64::INFINITY, f64::min);
            let r = dtw_align(&a, &b).unwrap();
            assert!((r.distance - best).abs() < 1e-12);
            assert!((path_cost(&a, &b, &r.path) - best).abs() < 1e-12);
            assert!(all.iter().any(|(_, p)| *p == r.path));
            assert!((dtw_distance(&a, &b).unwrap() - best).abs() < 1e-12);
        }
    }

    #[test]
    fn translated_line_has_constant_deviation() {
        let reference: Vec<_> = (0..20).map(|i| Point::new(i as f64 * 0.01, 0.05)).collect();
        let writing: Vec<_> = reference.iter().map(|p| p + Point::new(0.0, 0.01)).collect();
        let dev = deviation_profile(&writing, &reference).unwrap();
        for d in &dev.per_waypoint {
            assert!((d - Point::new(0.0, 0.01)).norm() < 1e-9, "{d:?}");
        }
        // A shift along the line itself warps, so only the perpendicular part
        // survives exactly; the along-line part is absorbed except at the ends.
        let writing: Vec<_> = reference.iter().map(|p| p + Point::new(0.01, 0.0)).collect();
        let dev = deviation_profile(&writing, &reference).unwrap();
        assert!(dev.per_waypoint.iter().all(|d| d.y.abs() < 1e-12));
    }

    #[test]
    fn toy_pair_matches_hand_stepped_table() {
        // Local costs |a_i - b_j| on a 1-D toy (y = 0):
        //   a = 0, 1, 2, 3, 4      b = 0, 2, 2, 3, 5
        // Cumulative table D (rows a, cols b):
        //   0  2  4  7 12
        //   1  1  2  4  8
        //   3  1  1  2  5
        //   6  2  2  1  3
        //  10  4  4  2  2
        // Traceback from (4,4): diag (3,3)=1 -> diag (2,2)=1 -> diag (1,1)=1 -> diag (0,0).
        // Path is the full diagonal, so deviations are b-aligned a_i - b_i.
        let a = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
        let b = pts(&[(0.0, 0.0), (2.0, 0.0), (2.0, 0.0), (3.0, 0.0), (5.0, 0.0)]);
        let r = dtw_align(&a, &b).unwrap();
        assert_eq!(r.distance, 2.0);
        assert_eq!(r.path, vec![(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]);
        let dev = deviation_profile(&a, &b).unwrap();
        let dx: Vec<f64> = dev.per_waypoint.iter().map(|d| d.x).collect();
        assert_eq!(dx, vec![0.0, -1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn works_in_single_precision() {
        let a = vec![Point::new(0.0f32, 0.0), Point::new(1.0, 0.0)];
        let b = vec![Point::new(0.0f32, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 0.0)];
        assert_eq!(dtw_align(&a, &b).unwrap().distance, 0.0f32);
    }

    fn arb_seq() -> impl Strategy<Value = Vec<Point<f64>>> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..25)
            .prop_map(|v| v.into_iter().map(|(x, y)| Point::new(x, y)).collect())
    }

    proptest! {
        #[test]
        fn self_distance_is_zero(a in arb_seq()) {
            prop_assert_eq!(dtw_align(&a, &a).unwrap().distance, 0.0);
        }

        #[test]
        fn distance_is_symmetric(a in arb_seq(), b in arb_seq()) {
            let ab = dtw_align(&a, &b).unwrap().distance;
            let ba = dtw_align(&b, &a).unwrap().distance;
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        }

        #[test]
        fn invariant_under_common_translation(a in arb_seq(), b in arb_seq(), dx in -5.0..5.0f64, dy in -5.0..5.0f64) {
            let shift = Point::new(dx, dy);
            let at: Vec<_> = a.iter().map(|p| p + shift).collect();
            let bt: Vec<_> = b.iter().map(|p| p + shift).collect();
            let d0 = dtw_align(&a, &b).unwrap().distance;
            let d1 = dtw_align(&at, &bt).unwrap().distance;
            prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
        }

        #[test]
        fn bounded_by_pointwise_sum(pairs in prop::collection::vec(((-1.0..1.0f64, -1.0..1.0f64), (-1.0..1.0f64, -1.0..1.0f64)), 1..25)) {
            let a: Vec<_> = pairs.iter().map(|((x, y), _)| Point::new(*x, *y)).collect();
            let b: Vec<_> = pairs.iter().map(|(_, (x, y))| Point::new(*x, *y)).collect();
            let pointwise: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).sum();
            prop_assert!(dtw_align(&a, &b).unwrap().distance <= pointwise + 1e-12);
        }

        #[test]
        fn path_is_monotone_and_anchored(a in arb_seq(), b in arb_seq()) {
            let r = dtw_align(&a, &b).unwrap();
            prop_assert_eq!(r.path[0], (0, 0));
            prop_assert_eq!(*r.path.last().unwrap(), (a.len() - 1, b.len() - 1));
            for w in r.path.windows(2) {
                let step = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                prop_assert!(step == (1, 0) || step == (0, 1) || step == (1, 1));
            }
        }
    }
}
