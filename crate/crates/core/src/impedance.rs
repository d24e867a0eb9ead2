//! Variable impedance: reference stiffness from the pre-test deviation,
//! engagement stiffness driven by the previous writing error, and the
//! resulting spring-damper force. All stiffnesses are diagonal, one value
//! per planar axis.

use serde::{Deserialize, Serialize};

use crate::dtw::DeviationProfile;
use crate::scalar::{clamp, Point, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    deny_unknown_fields,
    default,
    bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct ImpedanceConfig<T: Scalar> {
    /// N/m².
    pub beta_r: T,
    /// N/m².
    pub beta_k: T,
    pub alpha: T,
    /// Error threshold per axis, meters.
    pub pi_threshold: Point<T>,
    /// N/m per axis.
    pub k_min: Point<T>,
    /// N/m per axis.
    pub k_max: Point<T>,
    /// Control period, seconds.
    pub sample_interval: T,
}

impl<T: Scalar> Default for ImpedanceConfig<T> {
    fn default() -> Self {
        let both = |v: f64| Point::new(T::lit(v), T::lit(v));
        Self {
            beta_r: T::lit(1000.0),
            beta_k: T::lit(100.0),
            alpha: T::lit(2000.0),
            pi_threshold: both(0.05),
            k_min: both(200.0),
            k_max: both(1200.0),
            sample_interval: T::lit(0.001),
        }
    }
}

impl<T: Scalar> ImpedanceConfig<T> {
    pub fn validate(&self) -> Result<(), String> {
        let positive = |v: T| v > T::zero();
        let scalars = [self.beta_r, self.beta_k, self.alpha, self.sample_interval];
        let axes = [self.pi_threshold, self.k_min, self.k_max];
        if !scalars.into_iter().all(positive) || !axes.iter().all(|p| positive(p.x) && positive(p.y)) {
            return Err("impedance constants must be positive".into());
        }
        if self.k_min.x > self.k_max.x || self.k_min.y > self.k_max.y {
            return Err("k_min must not exceed k_max".into());
        }
        Ok(())
    }

    fn clamp_k(&self, k: Point<T>) -> Point<T> {
        Point::new(
            clamp(k.x, self.k_min.x, self.k_max.x),
            clamp(k.y, self.k_min.y, self.k_max.y),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ImpedanceState<T: Scalar> {
    pub k_r: Point<T>,
    pub k_s: Point<T>,
    pub k_d: Point<T>,
    pub b_d: Point<T>,
    pub iteration: usize,
}

impl<T: Scalar> ImpedanceState<T> {
    /// No guidance at all: zero stiffness and damping.
    pub fn disengaged() -> Self {
        Self {
            k_r: Point::zeros(),
            k_s: Point::zeros(),
            k_d: Point::zeros(),
            b_d: Point::zeros(),
            iteration: 0,
        }
    }

    pub fn with_iteration(mut self, iteration: usize) -> Self {
        self.iteration = iteration;
        self
    }
}

/// `clamp(β_r · mean|Δχ̄|)` per axis.
pub fn initial_stiffness<T: Scalar>(dev: &DeviationProfile<T>, cfg: &ImpedanceConfig<T>) -> Point<T> {
    cfg.clamp_k(dev.mean_abs() * cfg.beta_r)
}

/// `tanh((αΩ − Π)/2)` with `Ω = δ² − Π²`.
pub fn psi<T: Scalar>(delta: T, pi: T, alpha: T) -> T {
    let omega = delta * delta - pi * pi;
    ((alpha * omega - pi) * T::lit(0.5)).tanh()
}

/// `max(0, k_s + β_K Ψ(mean|error|))` per axis.
pub fn update_engagement<T: Scalar>(
    k_s_prev: Point<T>,
    error_profile: &DeviationProfile<T>,
    cfg: &ImpedanceConfig<T>,
) -> Point<T> {
    let err = error_profile.mean_abs();
    let step = |prev: T, e: T, pi: T| (prev + cfg.beta_k * psi(e, pi, cfg.alpha)).max(T::zero());
    Point::new(
        step(k_s_prev.x, err.x, cfg.pi_threshold.x),
        step(k_s_prev.y, err.y, cfg.pi_threshold.y),
    )
}

pub fn compose<T: Scalar>(k_r: Point<T>, k_s: Point<T>, cfg: &ImpedanceConfig<T>) -> ImpedanceState<T> {
    let k_d = cfg.clamp_k(k_r + k_s);
    ImpedanceState {
        k_r,
        k_s,
        k_d,
        b_d: damping(k_d),
        iteration: 0,
    }
}

/// `½√k` per axis.
pub fn damping<T: Scalar>(k: Point<T>) -> Point<T> {
    let half = T::lit(0.5);
    Point::new(half * k.x.sqrt(), half * k.y.sqrt())
}

/// `−K∘(x − x_d) − B∘(ẋ − ẋ_d)`.
pub fn control_force<T: Scalar>(
    state: &ImpedanceState<T>,
    x: Point<T>,
    x_dot: Point<T>,
    x_d: Point<T>,
    x_d_dot: Point<T>,
) -> Point<T> {
    -(state.k_d.component_mul(&(x - x_d)) + state.b_d.component_mul(&(x_dot - x_d_dot)))
}
