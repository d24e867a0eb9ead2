//! Scalar abstraction for the numeric core.
//!
//! Everything that is pure math (alignment, mixtures, Gaussian processes,
//! curvature, impedance) is written against [`Scalar`], which both `f32` and
//! `f64` implement. Simulation and experiment orchestration are `f64` only.

use std::fmt;

use nalgebra::{Matrix2, RealField, Vector2};
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar usable throughout the numeric core.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + fmt::Debug + fmt::Display + 'static
{
    /// Converts an `f64` literal. Panics only if the target cannot represent
    /// finite `f64` values at all, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the concrete type.
    fn epsilon() -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn epsilon() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    #[inline]
    fn epsilon() -> Self {
        f64::EPSILON
    }
}

/// Planar point or vector, meters.
pub type Point<T> = Vector2<T>;

/// 2x2 matrix, used for planar covariances and coregionalization blocks.
pub type Mat2<T> = Matrix2<T>;

#[inline]
pub(crate) fn clamp<T: Scalar>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// Smallest eigenvalue of a symmetric 2x2 matrix (closed form).
pub fn min_eigenvalue_sym2<T: Scalar>(m: &Mat2<T>) -> T {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = (m[(0, 1)] + m[(1, 0)]) * T::lit(0.5);
    let half_tr = (a + d) * T::lit(0.5);
    let diff = (a - d) * T::lit(0.5);
    half_tr - (diff * diff + b * b).sqrt()
}

/// Symmetrizes in place: `(m + mᵀ) / 2`.
pub fn symmetrize2<T: Scalar>(m: &Mat2<T>) -> Mat2<T> {
    (m + m.transpose()) * T::lit(0.5)
}
