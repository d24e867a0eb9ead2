//! Multi-output GP whose prior mean and kernel come from a GMR style model.
//!
//! `k(t, t') = Σ_z h_z(t) h_z(t') Σ̂_z exp(−(t − t')² / (2 ℓ_z²))`, with
//! `h_z` the GMR time responsibilities and `Σ̂_z` the componentwise
//! conditional covariances. Outputs are stacked `[x(t₁), y(t₁), x(t₂), …]`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::gmm::{GmmModel, StyleDataset};
use crate::gmr::Gmr;
use crate::scalar::{min_eigenvalue_sym2, symmetrize2, Mat2, Point, Scalar};
use crate::trajectory::{SequenceError, WaypointSeq};
use crate::viapoint::ViaPointSet;

/// Gram matrices whose estimated condition number exceeds this are refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("expected {expected} length-scales, got {got}")]
    LengthScaleCount { expected: usize, got: usize },
    #[error("length-scale {0} is not positive")]
    NonPositiveLengthScale(usize),
    #[error("conditional covariance of component {0} is not positive semi-definite")]
    NonPsdComponent(usize),
    #[error("Gram matrix is ill-conditioned (estimate {estimate:.3e}); increase the observation noise")]
    IllConditioned { estimate: f64 },
    #[error("posteriors have different timestamps")]
    TimestampMismatch,
    #[error("via-point set is empty")]
    NoViaPoints,
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

#[derive(Debug, Clone)]
pub struct GmrGpKernel<T: Scalar> {
    gmr: Gmr<T>,
    length_scales: Vec<T>,
    noise: Mat2<T>,
}

pub fn build_kernel<T: Scalar>(
    model: &GmmModel<T>,
    length_scales: &[T],
    noise: Mat2<T>,
) -> Result<GmrGpKernel<T>, GpError> {
    let gmr = Gmr::new(model);
    let z = gmr.components().len();
    if length_scales.len() != z {
        return Err(GpError::LengthScaleCount {
            expected: z,
            got: length_scales.len(),
        });
    }
    if let Some(i) = length_scales.iter().position(|l| !(*l > T::zero())) {
        return Err(GpError::NonPositiveLengthScale(i));
    }
    for (i, c) in gmr.components().iter().enumerate() {
        let scale = c.covariance.abs().max().max(T::epsilon());
        if min_eigenvalue_sym2(&c.covariance) < -T::lit(1e-10) * scale {
            return Err(GpError::NonPsdComponent(i));
        }
    }
    Ok(GmrGpKernel {
        gmr,
        length_scales: length_scales.to_vec(),
        noise,
    })
}

impl<T: Scalar> GmrGpKernel<T> {
    pub fn components(&self) -> usize {
        self.length_scales.len()
    }

    pub fn length_scales(&self) -> &[T] {
        &self.length_scales
    }

    /// Default observation noise `Σ_ε`.
    pub fn noise(&self) -> Mat2<T> {
        self.noise
    }

    pub fn gmr(&self) -> &Gmr<T> {
        &self.gmr
    }

    /// GMR conditional mean, the prior mean of the GP.
    pub fn prior_mean(&self, t: T) -> Point<T> {
        self.gmr.condition(t).mean
    }

    pub fn eval(&self, t: T, s: T) -> Mat2<T> {
        self.eval_with(&self.gmr.responsibilities(t), t, &self.gmr.responsibilities(s), s)
    }

    fn eval_with(&self, ht: &[T], t: T, hs: &[T], s: T) -> Mat2<T> {
        let d2 = (t - s) * (t - s);
        let half = T::lit(0.5);
        let mut out = Mat2::zeros();
        for (z, c) in self.gmr.components().iter().enumerate() {
            let w = ht[z] * hs[z];
            if w == T::zero() {
                continue;
            }
            let l = self.length_scales[z];
            out += c.covariance * (w * (-half * d2 / (l * l)).exp());
        }
        out
    }
}

/// One noisy observation of the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T: Scalar> {
    pub t: T,
    pub point: Point<T>,
    pub noise: Mat2<T>,
}

/// Learner samples as observations with noise `noise`. Samples sharing a
/// timestamp become one observation of their mean with `noise / count`,
/// which leaves the posterior unchanged.
pub fn observations_from_dataset<T: Scalar>(data: &StyleDataset<T>, noise: Mat2<T>) -> Vec<Observation<T>> {
    let mut samples: Vec<(T, Point<T>)> = data.samples().to_vec();
    samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut out: Vec<Observation<T>> = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        let t = samples[i].0;
        let mut j = i;
        let mut sum = Point::zeros();
        while j < samples.len() && samples[j].0 == t {
            sum += samples[j].1;
            j += 1;
        }
        let count = T::from_usize_lossy(j - i);
        out.push(Observation {
            t,
            point: sum / count,
            noise: noise / count,
        });
        i = j;
    }
    out
}

/// Per-time Gaussian marginals of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPosterior<T: Scalar> {
    pub timestamps: Vec<T>,
    pub means: Vec<Point<T>>,
    pub covariances: Vec<Mat2<T>>,
}

impl<T: Scalar> TrajectoryPosterior<T> {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn mean_waypoints(&self) -> Result<WaypointSeq<T>, SequenceError> {
        WaypointSeq::new(self.timestamps.clone(), self.means.clone())
    }

    /// Adds `extra` to every covariance.
    pub fn with_added_noise(mut self, extra: Mat2<T>) -> Self {
        for c in &mut self.covariances {
            *c += extra;
        }
        self
    }

    /// Independent per-time draws.
    pub fn sample(&self, seed: u64) -> Vec<Point<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.means
            .iter()
            .zip(&self.covariances)
            .map(|(m, c)| {
                let z = Point::new(
                    T::lit(StandardNormal.sample(&mut rng)),
                    T::lit(StandardNormal.sample(&mut rng)),
                );
                let c = floor_eigenvalues(c, T::zero());
                match c.cholesky() {
                    Some(l) => m + l.l() * z,
                    None => *m,
                }
            })
            .collect()
    }
}

/// Exact posterior of the trajectory at `queries` given `observations`,
/// through a Cholesky factorization of the noisy Gram matrix.
pub fn gp_posterior<T, F>(
    prior_mean: F,
    kernel: &GmrGpKernel<T>,
    observations: &[Observation<T>],
    queries: &[T],
) -> Result<TrajectoryPosterior<T>, GpError>
where
    T: Scalar,
    F: Fn(T) -> Point<T>,
{
    let hq: Vec<Vec<T>> = queries.iter().map(|&t| kernel.gmr.responsibilities(t)).collect();
    let prior_means: Vec<Point<T>> = queries.iter().map(|&t| prior_mean(t)).collect();
    let prior_covs: Vec<Mat2<T>> = queries
        .iter()
        .zip(&hq)
        .map(|(&t, h)| kernel.eval_with(h, t, h, t))
        .collect();
    if observations.is_empty() {
        return Ok(TrajectoryPosterior {
            timestamps: queries.to_vec(),
            means: prior_means,
            covariances: prior_covs,
        });
    }

    let n = observations.len();
    let ho: Vec<Vec<T>> = observations.iter().map(|o| kernel.gmr.responsibilities(o.t)).collect();
    let mut gram = DMatrix::<T>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..=i {
            let mut k = kernel.eval_with(&ho[i], observations[i].t, &ho[j], observations[j].t);
            if i == j {
                k += observations[i].noise;
                k = symmetrize2(&k);
            }
            gram.view_mut((2 * i, 2 * j), (2, 2)).copy_from(&k);
            gram.view_mut((2 * j, 2 * i), (2, 2)).copy_from(&k.transpose());
        }
    }
    let chol = factor(gram)?;

    let mut residual = DVector::<T>::zeros(2 * n);
    for (i, o) in observations.iter().enumerate() {
        let r = o.point - prior_mean(o.t);
        residual[2 * i] = r.x;
        residual[2 * i + 1] = r.y;
    }
    let alpha = chol.solve(&residual);

    let q = queries.len();
    // Cross covariance K(obs, queries), 2n × 2q.
    let mut cross = DMatrix::<T>::zeros(2 * n, 2 * q);
    for (j, &tq) in queries.iter().enumerate() {
        for (i, o) in observations.iter().enumerate() {
            let k = kernel.eval_with(&ho[i], o.t, &hq[j], tq);
            cross.view_mut((2 * i, 2 * j), (2, 2)).copy_from(&k);
        }
    }
    let mean_shift = cross.tr_mul(&alpha);
    let v = chol.l().solve_lower_triangular(&cross).expect("Cholesky factor is invertible");

    let mut means = Vec::with_capacity(q);
    let mut covariances = Vec::with_capacity(q);
    for j in 0..q {
        means.push(prior_means[j] + Point::new(mean_shift[2 * j], mean_shift[2 * j + 1]));
        let vj = v.columns(2 * j, 2);
        let reduction = vj.tr_mul(&vj);
        let c = prior_covs[j] - Mat2::new(reduction[(0, 0)], reduction[(0, 1)], reduction[(1, 0)], reduction[(1, 1)]);
        covariances.push(symmetrize2(&c));
    }
    Ok(TrajectoryPosterior {
        timestamps: queries.to_vec(),
        means,
        covariances,
    })
}

fn factor<T: Scalar>(gram: DMatrix<T>) -> Result<Cholesky<T, Dyn>, GpError> {
    let chol = Cholesky::new(gram).ok_or(GpError::IllConditioned { estimate: f64::INFINITY })?;
    // Squared ratio of the factor's extreme pivots estimates the condition number.
    let diag = chol.l_dirty().diagonal();
    let max = diag.max().to_f64_lossy();
    let min = diag.min().to_f64_lossy();
    let estimate = if min > 0.0 { (max / min).powi(2) } else { f64::INFINITY };
    if estimate > MAX_CONDITION {
        return Err(GpError::IllConditioned { estimate });
    }
    Ok(chol)
}

/// Raises the smallest eigenvalue of a symmetric 2×2 matrix to `floor`.
pub fn floor_eigenvalues<T: Scalar>(c: &Mat2<T>, floor: T) -> Mat2<T> {
    let c = symmetrize2(c);
    let lo = min_eigenvalue_sym2(&c);
    if lo < floor {
        c + Mat2::identity() * (floor - lo)
    } else {
        c
    }
}

/// Per-time product of Gaussians. Covariances with an eigenvalue below
/// `cov_floor` are lifted to it before inversion.
pub fn fuse_gaussians<T: Scalar>(
    a: &TrajectoryPosterior<T>,
    b: &TrajectoryPosterior<T>,
    cov_floor: T,
) -> Result<TrajectoryPosterior<T>, GpError> {
    if a.timestamps != b.timestamps || a.means.len() != b.means.len() {
        return Err(GpError::TimestampMismatch);
    }
    let mut means = Vec::with_capacity(a.len());
    let mut covariances = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        let ca = floor_eigenvalues(&a.covariances[i], cov_floor);
        let cb = floor_eigenvalues(&b.covariances[i], cov_floor);
        let half = T::from_f64(0.5).unwrap();
        if ca == cb {
            means.push((a.means[i] + b.means[i]) * half);
            covariances.push(ca * half);
            continue;
        }
        let pa = inverse2(&ca);
        let pb = inverse2(&cb);
        let cov = symmetrize2(&inverse2(&(pa + pb)));
        means.push(cov * (pa * a.means[i] + pb * b.means[i]));
        covariances.push(cov);
    }
    Ok(TrajectoryPosterior {
        timestamps: a.timestamps.clone(),
        means,
        covariances,
    })
}

fn inverse2<T: Scalar>(m: &Mat2<T>) -> Mat2<T> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions<T: Scalar> {
    /// One per component; `duration / Z` each when unset.
    pub length_scales: Option<Vec<T>>,
    /// Learner observation noise `Σ_ε`.
    pub learner_noise: Mat2<T>,
    /// Isotropic via-point observation noise.
    pub via_noise: T,
    pub cov_floor: T,
    /// Draw the waypoints from the fused posterior instead of taking its mean.
    pub sample: bool,
}

impl<T: Scalar> Default for GenerateOptions<T> {
    fn default() -> Self {
        Self {
            length_scales: None,
            learner_noise: Mat2::identity() * T::lit(1e-4),
            via_noise: T::lit(1e-6),
            cov_floor: T::lit(1e-6),
            sample: false,
        }
    }
}

/// Teaching waypoints for one stroke: the learner-conditioned posterior
/// (as a predictive, including `Σ_ε`) fused with the via-point-conditioned
/// posterior, both under the GMR prior.
pub fn generate_training_waypoints<T: Scalar>(
    style: &GmmModel<T>,
    via: &ViaPointSet<T>,
    learner_data: &StyleDataset<T>,
    timestamps: &[T],
    seed: u64,
    opts: &GenerateOptions<T>,
) -> Result<(WaypointSeq<T>, TrajectoryPosterior<T>), GpError> {
    if via.entries.is_empty() {
        return Err(GpError::NoViaPoints);
    }
    let z = style.components();
    let length_scales = match &opts.length_scales {
        Some(ls) => ls.clone(),
        None => {
            let span = match (timestamps.first(), timestamps.last()) {
                (Some(&a), Some(&b)) if b > a => b - a,
                _ => T::one(),
            };
            vec![span / T::from_usize_lossy(z); z]
        }
    };
    let kernel = build_kernel(style, &length_scales, opts.learner_noise)?;
    let mean = |t: T| kernel.prior_mean(t);

    let learner_obs = observations_from_dataset(learner_data, opts.learner_noise);
    let learner = gp_posterior(mean, &kernel, &learner_obs, timestamps)?.with_added_noise(opts.learner_noise);

    let via_noise = Mat2::identity() * opts.via_noise;
    let via_obs: Vec<Observation<T>> = via
        .entries
        .iter()
        .map(|v| Observation {
            t: v.t,
            point: v.point,
            noise: via_noise,
        })
        .collect();
    let guided = gp_posterior(mean, &kernel, &via_obs, timestamps)?;

    let fused = fuse_gaussians(&learner, &guided, opts.cov_floor)?;
    let points = if opts.sample {
        fused.sample(seed)
    } else {
        fused.means.clone()
    };
    let waypoints = WaypointSeq::new(timestamps.to_vec(), points)?;
    Ok((waypoints, fused))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn one_component() -> GmmModel<f64> {
        let cov = Matrix3::new(0.1, 0.01, 0.0, 0.01, 0.02, 0.005, 0.0, 0.005, 0.03);
        GmmModel::new(vec![1.0], vec![Vector3::new(0.5, 0.1, 0.1)], vec![cov]).unwrap()
    }

    #[test]
    fn single_component_kernel_reduces_to_scaled_rbf() {
        let model = one_component();
        let kernel = build_kernel(&model, &[0.2], Mat2::identity() * 1e-4).unwrap();
        let sigma = Gmr::new(&model).components()[0].covariance;
        assert!((kernel.eval(0.3, 0.3) - sigma).abs().max() < 1e-15);
        let expected = sigma * (-(0.1f64 * 0.1) / (2.0 * 0.04)).exp();
        assert!((kernel.eval(0.3, 0.4) - expected).abs().max() < 1e-15);
    }

    #[test]
    fn kernel_validation() {
        let model = one_component();
        assert_eq!(
            build_kernel(&model, &[0.1, 0.2], Mat2::zeros()).err(),
            Some(GpError::LengthScaleCount { expected: 1, got: 2 })
        );
        assert_eq!(
            build_kernel(&model, &[0.0], Mat2::zeros()).err(),
            Some(GpError::NonPositiveLengthScale(0))
        );
    }

    #[test]
    fn no_observations_returns_the_prior() {
        let model = one_component();
        let kernel = build_kernel(&model, &[0.2], Mat2::identity() * 1e-4).unwrap();
        let post = gp_posterior(|t| kernel.prior_mean(t), &kernel, &[], &[0.1, 0.7]).unwrap();
        for (i, &t) in [0.1, 0.7].iter().enumerate() {
            assert_eq!(post.means[i], kernel.prior_mean(t));
            assert_eq!(post.covariances[i], kernel.eval(t, t));
        }
    }

    #[test]
    fn noiseless_observation_is_interpolated() {
        let model = one_component();
        let kernel = build_kernel(&model, &[0.2], Mat2::zeros()).unwrap();
        let obs = Observation {
            t: 0.4,
            point: Point::new(0.3, -0.2),
            noise: Mat2::zeros(),
        };
        let post = gp_posterior(|t| kernel.prior_mean(t), &kernel, &[obs], &[0.4]).unwrap();
        assert!((post.means[0] - obs.point).abs().max() < 1e-6);
        assert!(post.covariances[0].abs().max() < 1e-12);
    }

    #[test]
    fn duplicate_timestamps_collapse_without_changing_the_posterior() {
        let model = one_component();
        let kernel = build_kernel(&model, &[0.2], Mat2::identity() * 1e-2).unwrap();
        let samples = vec![
            (0.2, Point::new(0.1, 0.2)),
            (0.5, Point::new(0.0, 0.1)),
            (0.2, Point::new(0.3, 0.1)),
            (0.5, Point::new(0.2, 0.3)),
            (0.9, Point::new(0.2, 0.2)),
        ];
        let data = StyleDataset::new(samples.clone(), 2);
        let collapsed = observations_from_dataset(&data, kernel.noise());
        assert_eq!(collapsed.len(), 3);
        let raw: Vec<Observation<f64>> = samples
            .iter()
            .map(|&(t, p)| Observation {
                t,
                point: p,
                noise: kernel.noise(),
            })
            .collect();
        let qs = [0.0, 0.3, 0.6, 1.0];
        let a = gp_posterior(|t| kernel.prior_mean(t), &kernel, &collapsed, &qs).unwrap();
        let b = gp_posterior(|t| kernel.prior_mean(t), &kernel, &raw, &qs).unwrap();
        for i in 0..qs.len() {
            assert!((a.means[i] - b.means[i]).abs().max() < 1e-12);
            assert!((a.covariances[i] - b.covariances[i]).abs().max() < 1e-12);
        }
    }

    #[test]
    fn near_singular_gram_is_refused() {
        let model = one_component();
        let kernel = build_kernel(&model, &[0.2], Mat2::zeros()).unwrap();
        let obs: Vec<Observation<f64>> = (0..4)
            .map(|i| Observation {
                t: 0.5 + 1e-7 * i as f64,
                point: Point::new(0.1, 0.1),
                noise: Mat2::zeros(),
            })
            .collect();
        let err = gp_posterior(|t| kernel.prior_mean(t), &kernel, &obs, &[0.5]).unwrap_err();
        assert!(matches!(err, GpError::IllConditioned { .. }));
    }

    fn posterior(mean: Point<f64>, cov: Mat2<f64>) -> TrajectoryPosterior<f64> {
        TrajectoryPosterior {
            timestamps: vec![0.0],
            means: vec![mean],
            covariances: vec![cov],
        }
    }

    #[test]
    fn fusing_identical_gaussians_halves_the_covariance() {
        let c = Mat2::new(0.5, 0.25, 0.25, 1.0);
        let a = posterior(Point::new(0.25, -0.5), c);
        let fused = fuse_gaussians(&a, &a, 1e-6).unwrap();
        assert_eq!(fused.covariances[0], c / 2.0);
        assert!((fused.means[0] - a.means[0]).abs().max() < 1e-15);
    }

    #[test]
    fn uninformative_partner_leaves_the_other_unchanged() {
        let a = posterior(Point::new(0.1, 0.2), Mat2::new(1e-4, 2e-5, 2e-5, 3e-4));
        let b = posterior(Point::new(5.0, -3.0), Mat2::identity() * 1e6);
        let fused = fuse_gaussians(&a, &b, 1e-6).unwrap();
        assert!((fused.means[0] - a.means[0]).abs().max() < 1e-6);
        assert!((fused.covariances[0] - a.covariances[0]).abs().max() < 1e-6);
    }

    #[test]
    fn mismatched_timestamps_are_rejected() {
        let a = posterior(Point::zeros(), Mat2::identity());
        let mut b = a.clone();
        b.timestamps[0] = 1.0;
        assert_eq!(fuse_gaussians(&a, &b, 1e-6).err(), Some(GpError::TimestampMismatch));
    }

    #[test]
    fn sampling_is_seeded() {
        let a = posterior(Point::new(0.1, 0.2), Mat2::identity() * 1e-4);
        assert_eq!(a.sample(3), a.sample(3));
        assert_ne!(a.sample(3), a.sample(4));
    }
}
