//! Gaussian mixture regression: position given time.

use crate::gmm::{log_sum_exp, GmmModel};
use crate::scalar::{symmetrize2, Mat2, Point, Scalar};
use crate::trajectory::WaypointSeq;

/// Linear-Gaussian regression of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentConditional<T: Scalar> {
    pub log_weight: T,
    pub mean_t: T,
    pub var_t: T,
    pub mean_x: Point<T>,
    /// `Σ_xt / Σ_tt`.
    pub gain: Point<T>,
    /// `Σ_xx − Σ_xt Σ_tx / Σ_tt`, independent of `t`.
    pub covariance: Mat2<T>,
}

impl<T: Scalar> ComponentConditional<T> {
    pub fn mean_at(&self, t: T) -> Point<T> {
        self.mean_x + self.gain * (t - self.mean_t)
    }

    fn log_time_density(&self, t: T) -> T {
        let d = t - self.mean_t;
        let ln_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
        -T::lit(0.5) * (ln_2pi + self.var_t.ln() + d * d / self.var_t)
    }
}

/// Conditional distribution of position at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct GmrOutput<T: Scalar> {
    pub mean: Point<T>,
    pub covariance: Mat2<T>,
    /// Time responsibilities `h_z(t)`, summing to 1.
    pub responsibilities: Vec<T>,
}

/// Precomputed per-component regressions of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmr<T: Scalar> {
    components: Vec<ComponentConditional<T>>,
}

impl<T: Scalar> Gmr<T> {
    pub fn new(model: &GmmModel<T>) -> Self {
        let components = model
            .weights()
            .iter()
            .zip(model.means())
            .zip(model.covariances())
            .map(|((&w, mu), s)| {
                let var_t = s[(0, 0)];
                let cross = Point::new(s[(1, 0)], s[(2, 0)]);
                let gain = cross / var_t;
                let sxx = Mat2::new(s[(1, 1)], s[(1, 2)], s[(2, 1)], s[(2, 2)]);
                ComponentConditional {
                    log_weight: w.ln(),
                    mean_t: mu[0],
                    var_t,
                    mean_x: Point::new(mu[1], mu[2]),
                    gain,
                    covariance: symmetrize2(&(sxx - cross * cross.transpose() / var_t)),
                }
            })
            .collect();
        Self { components }
    }

    pub fn components(&self) -> &[ComponentConditional<T>] {
        &self.components
    }

    /// `h_z(t)` computed in the log domain.
    pub fn responsibilities(&self, t: T) -> Vec<T> {
        let logs: Vec<T> = self
            .components
            .iter()
            .map(|c| c.log_weight + c.log_time_density(t))
            .collect();
        let total = log_sum_exp(&logs);
        logs.into_iter().map(|l| (l - total).exp()).collect()
    }

    /// Mixture-moment-matched conditional of position at `t`.
    pub fn condition(&self, t: T) -> GmrOutput<T> {
        let h = self.responsibilities(t);
        let means: Vec<Point<T>> = self.components.iter().map(|c| c.mean_at(t)).collect();
        let mean = h
            .iter()
            .zip(&means)
            .fold(Point::zeros(), |acc, (&w, m)| acc + m * w);
        let covariance = h
            .iter()
            .zip(&means)
            .zip(&self.components)
            .fold(Mat2::zeros(), |acc, ((&w, m), c)| {
                let d = m - mean;
                acc + (c.covariance + d * d.transpose()) * w
            });
        GmrOutput {
            mean,
            covariance: symmetrize2(&covariance),
            responsibilities: h,
        }
    }

    pub fn mean_curve(&self, timestamps: &[T]) -> Vec<Point<T>> {
        timestamps.iter().map(|&t| self.condition(t).mean).collect()
    }
}

pub fn gmr_condition<T: Scalar>(model: &GmmModel<T>, t: T) -> GmrOutput<T> {
    Gmr::new(model).condition(t)
}

/// Conditional means at the given timestamps, as a waypoint sequence.
pub fn style_mean_curve<T: Scalar>(model: &GmmModel<T>, timestamps: &[T]) -> WaypointSeq<T> {
    let points = Gmr::new(model).mean_curve(timestamps);
    WaypointSeq::new(timestamps.to_vec(), points).expect("timestamps are increasing")
}
