//! Gaussian mixture over joint `(t, x, y)` samples, fitted by EM.
//!
//! Initialization is k-means++ seeding followed by Lloyd iterations, driven
//! by a seeded ChaCha RNG so fits are reproducible. Every covariance carries
//! `cov_floor` on its diagonal.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Point, Scalar};
use crate::trajectory::WaypointSeq;

pub const MODEL_FORMAT: &str = "penmentor-gmm";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("need at least {needed} samples for {components} components, got {got}")]
    TooFewSamples {
        needed: usize,
        components: usize,
        got: usize,
    },
    #[error("component count must be at least 1")]
    NoComponents,
    #[error("every component collapsed during fitting")]
    AllComponentsPruned,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model file: {0}")]
    Format(String),
}

/// Joint time/position samples from `source_iterations` writings.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleDataset<T: Scalar> {
    samples: Vec<(T, Point<T>)>,
    pub source_iterations: usize,
}

impl<T: Scalar> StyleDataset<T> {
    pub fn new(samples: Vec<(T, Point<T>)>, source_iterations: usize) -> Self {
        Self {
            samples,
            source_iterations,
        }
    }

    /// Stacks the waypoints of several writings of the same stroke.
    pub fn from_writings<'a, I>(writings: I) -> Self
    where
        I: IntoIterator<Item = &'a WaypointSeq<T>>,
    {
        let mut samples = Vec::new();
        let mut count = 0;
        for w in writings {
            count += 1;
            samples.extend(w.timestamps().iter().copied().zip(w.points().iter().copied()));
        }
        Self::new(samples, count)
    }

    pub fn samples(&self) -> &[(T, Point<T>)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn rows(&self) -> Vec<Vector3<T>> {
        self.samples
            .iter()
            .map(|(t, p)| Vector3::new(*t, p.x, p.y))
            .collect()
    }
}

/// Mixture weights, means and covariances over `(t, x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct GmmModel<T: Scalar> {
    weights: Vec<T>,
    means: Vec<Vector3<T>>,
    covariances: Vec<Matrix3<T>>,
}

impl<T: Scalar> GmmModel<T> {
    /// Validates: weights positive summing to 1, covariances symmetric PD.
    pub fn new(
        weights: Vec<T>,
        means: Vec<Vector3<T>>,
        covariances: Vec<Matrix3<T>>,
    ) -> Result<Self, GmmError> {
        let z = weights.len();
        if z == 0 {
            return Err(GmmError::NoComponents);
        }
        if means.len() != z || covariances.len() != z {
            return Err(GmmError::InvalidModel(format!(
                "{z} weights but {} means and {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let sum = weights.iter().fold(T::zero(), |a, &b| a + b);
        if weights.iter().any(|w| !(*w > T::zero())) || (sum - T::one()).abs() > T::lit(1e-9) {
            return Err(GmmError::InvalidModel("weights must be positive and sum to 1".into()));
        }
        for (k, c) in covariances.iter().enumerate() {
            if (c - c.transpose()).abs().max() > T::lit(1e-12) * c.abs().max().max(T::one()) {
                return Err(GmmError::InvalidModel(format!("covariance {k} is not symmetric")));
            }
            if c.cholesky().is_none() {
                return Err(GmmError::InvalidModel(format!("covariance {k} is not positive definite")));
            }
        }
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vector3<T>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Matrix3<T>] {
        &self.covariances
    }

    /// Average log density of the rows under the mixture.
    pub fn mean_log_likelihood(&self, data: &StyleDataset<T>) -> T {
        let comps = ComponentDensities::new(self, T::zero());
        let rows = data.rows();
        let mut scratch = vec![T::zero(); self.components()];
        let total = rows
            .iter()
            .fold(T::zero(), |acc, x| acc + comps.log_joint(x, &mut scratch));
        total / T::from_usize_lossy(rows.len().max(1))
    }
}

/// Per-component log-density evaluator.
struct ComponentDensities<T: Scalar> {
    log_weights: Vec<T>,
    means: Vec<Vector3<T>>,
    chol: Vec<Matrix3<T>>,
    log_norm: Vec<T>,
}

impl<T: Scalar> ComponentDensities<T> {
    /// Each density is scaled by `exp(−½ ridge tr Σ⁻¹)`.
    fn new(model: &GmmModel<T>, ridge: T) -> Self {
        let half_log_2pi3 = T::lit(1.5 * (2.0 * std::f64::consts::PI).ln());
        let mut chol = Vec::with_capacity(model.components());
        let mut log_norm = Vec::with_capacity(model.components());
        for c in &model.covariances {
            let l = c
                .cholesky()
                .expect("model covariances are positive definite")
                .unpack();
            let log_det_half = l[(0, 0)].ln() + l[(1, 1)].ln() + l[(2, 2)].ln();
            let mut penalty = T::zero();
            if ridge > T::zero() {
                let inv = l.try_inverse().expect("cholesky factor is invertible");
                penalty = T::lit(0.5) * ridge * inv.norm_squared();
            }
            log_norm.push(-half_log_2pi3 - log_det_half - penalty);
            chol.push(l);
        }
        Self {
            log_weights: model.weights.iter().map(|w| w.ln()).collect(),
            means: model.means.clone(),
            chol,
            log_norm,
        }
    }

    /// Fills `out[k] = log(h_k N(x; mu_k, Sigma_k))` and returns the log of
    /// their sum.
    fn log_joint(&self, x: &Vector3<T>, out: &mut [T]) -> T {
        let half = T::lit(0.5);
        for k in 0..self.means.len() {
            let d = x - self.means[k];
            let l = &self.chol[k];
            // Forward substitution L y = d.
            let y0 = d[0] / l[(0, 0)];
            let y1 = (d[1] - l[(1, 0)] * y0) / l[(1, 1)];
            let y2 = (d[2] - l[(2, 0)] * y0 - l[(2, 1)] * y1) / l[(2, 2)];
            let maha = y0 * y0 + y1 * y1 + y2 * y2;
            out[k] = self.log_weights[k] + self.log_norm[k] - half * maha;
        }
        log_sum_exp(out)
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::min_value().unwrap(), |a, b| a.max(b));
    if !max.is_finite() {
        return max;
    }
    let s = v.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + s.ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions<T: Scalar> {
    pub max_iterations: usize,
    /// Stop once `|ΔLL| / |LL|` falls below this.
    pub relative_tolerance: T,
    /// Added to every covariance diagonal.
    pub cov_floor: T,
    pub kmeans_iterations: usize,
    /// Components whose effective sample count drops below this are pruned.
    pub min_component_mass: T,
}

impl<T: Scalar> Default for EmOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_tolerance: T::lit(1e-6),
            cov_floor: T::lit(1e-6),
            kmeans_iterations: 20,
            min_component_mass: T::lit(1.0),
        }
    }
}

/// Fitted model plus EM diagnostics.
#[derive(Debug, Clone)]
pub struct GmmFit<T: Scalar> {
    pub model: GmmModel<T>,
    /// Regularized total log-likelihood after each E-step, starting from
    /// the initialization: each component density carries the factor
    /// `exp(−½ ε tr Σ_k⁻¹)`, which makes `S_k + εI` the exact M-step and
    /// the trace non-decreasing.
    pub log_likelihood: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Components dropped because their responsibilities collapsed.
    pub pruned: usize,
}

/// Fits `z` components with default options.
pub fn fit_gmm<T: Scalar>(data: &StyleDataset<T>, z: usize, seed: u64) -> Result<GmmFit<T>, GmmError> {
    fit_gmm_with(data, z, seed, &EmOptions::default())
}

pub fn fit_gmm_with<T: Scalar>(
    data: &StyleDataset<T>,
    z: usize,
    seed: u64,
    opts: &EmOptions<T>,
) -> Result<GmmFit<T>, GmmError> {
    if z == 0 {
        return Err(GmmError::NoComponents);
    }
    let needed = 4 * z;
    if data.len() < needed {
        return Err(GmmError::TooFewSamples {
            needed,
            components: z,
            got: data.len(),
        });
    }
    let rows = data.rows();
    let mut pruned = 0;
    let mut z = z;
    loop {
        if z == 0 {
            return Err(GmmError::AllComponentsPruned);
        }
        match em(&rows, z, seed, opts) {
            EmOutcome::Done(mut fit) => {
                fit.pruned = pruned;
                return Ok(fit);
            }
            EmOutcome::Collapsed => {
                pruned += 1;
                z -= 1;
            }
        }
    }
}

enum EmOutcome<T: Scalar> {
    Done(GmmFit<T>),
    Collapsed,
}

fn em<T: Scalar>(rows: &[Vector3<T>], z: usize, seed: u64, opts: &EmOptions<T>) -> EmOutcome<T> {
    let n = rows.len();
    let mut model = kmeans_init(rows, z, seed, opts);
    let mut resp = vec![T::zero(); n * z];
    let mut scratch = vec![T::zero(); z];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        // E-step.
        let comps = ComponentDensities::new(&model, opts.cov_floor);
        let mut ll = T::zero();
        for (i, x) in rows.iter().enumerate() {
            let total = comps.log_joint(x, &mut scratch);
            ll += total;
            for k in 0..z {
                resp[i * z + k] = (scratch[k] - total).exp();
            }
        }
        if let Some(&prev) = trace.last() {
            let prev: T = prev;
            if (ll - prev).abs() <= opts.relative_tolerance * prev.abs().max(T::one()) {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || iterations == opts.max_iterations {
            break;
        }
        // M-step.
        match m_step(rows, &resp, z, opts) {
            Some(next) => model = next,
            None => return EmOutcome::Collapsed,
        }
        iterations += 1;
    }
    EmOutcome::Done(GmmFit {
        model,
        log_likelihood: trace,
        iterations,
        converged,
        pruned: 0,
    })
}

fn m_step<T: Scalar>(rows: &[Vector3<T>], resp: &[T], z: usize, opts: &EmOptions<T>) -> Option<GmmModel<T>> {
    let n = rows.len();
    let mut mass = vec![T::zero(); z];
    let mut sums = vec![Vector3::zeros(); z];
    for (i, x) in rows.iter().enumerate() {
        for k in 0..z {
            let r = resp[i * z + k];
            mass[k] += r;
            sums[k] += x * r;
        }
    }
    if mass.iter().any(|&m| m < opts.min_component_mass) {
        return None;
    }
    let means: Vec<Vector3<T>> = sums.iter().zip(&mass).map(|(s, &m)| s / m).collect();
    let mut scatter = vec![Matrix3::zeros(); z];
    for (i, x) in rows.iter().enumerate() {
        for k in 0..z {
            let d = x - means[k];
            scatter[k] += d * d.transpose() * resp[i * z + k];
        }
    }
    let floor = Matrix3::identity() * opts.cov_floor;
    let covariances: Vec<Matrix3<T>> = scatter
        .into_iter()
        .zip(&mass)
        .map(|(s, &m)| {
            let c = s / m + floor;
            (c + c.transpose()) * T::lit(0.5)
        })
        .collect();
    let total = T::from_usize_lossy(n);
    let weights: Vec<T> = mass.iter().map(|&m| m / total).collect();
    let wsum = weights.iter().fold(T::zero(), |a, &b| a + b);
    let weights = weights.into_iter().map(|w| w / wsum).collect();
    Some(GmmModel {
        weights,
        means,
        covariances,
    })
}

/// k-means++ seeding, Lloyd refinement, then per-cluster moments.
fn kmeans_init<T: Scalar>(rows: &[Vector3<T>], z: usize, seed: u64, opts: &EmOptions<T>) -> GmmModel<T> {
    let n = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(z);
    centers.push(rows[rng.random_range(0..n)]);
    let mut d2: Vec<T> = rows.iter().map(|x| (x - centers[0]).norm_squared()).collect();
    while centers.len() < z {
        let total = d2.iter().fold(T::zero(), |a, &b| a + b);
        let pick = if total > T::zero() {
            let u = T::lit(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc >= u && d > T::zero() {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = rows[pick];
        for (d, x) in d2.iter_mut().zip(rows) {
            *d = (*d).min((x - c).norm_squared());
        }
        centers.push(c);
    }

    let mut assign = vec![0usize; n];
    for _ in 0..opts.kmeans_iterations.max(1) {
        let mut changed = false;
        for (i, x) in rows.iter().enumerate() {
            let mut best = (T::max_value().unwrap(), 0);
            for (k, c) in centers.iter().enumerate() {
                let d = (x - c).norm_squared();
                if d < best.0 {
                    best = (d, k);
                }
            }
            if assign[i] != best.1 {
                assign[i] = best.1;
                changed = true;
            }
        }
        let mut sums = vec![Vector3::zeros(); z];
        let mut counts = vec![0usize; z];
        for (x, &k) in rows.iter().zip(&assign) {
            sums[k] += x;
            counts[k] += 1;
        }
        for k in 0..z {
            if counts[k] > 0 {
                centers[k] = sums[k] / T::from_usize_lossy(counts[k]);
            }
        }
        if !changed {
            break;
        }
    }

    // Global covariance backs clusters too small for their own moments.
    let global_mean = rows.iter().fold(Vector3::zeros(), |a, x| a + x) / T::from_usize_lossy(n);
    let global_cov = rows.iter().fold(Matrix3::zeros(), |a, x| {
        let d = x - global_mean;
        a + d * d.transpose()
    }) / T::from_usize_lossy(n);
    let floor = Matrix3::identity() * opts.cov_floor;
    let mut weights = Vec::with_capacity(z);
    let mut covariances = Vec::with_capacity(z);
    for k in 0..z {
        let members: Vec<&Vector3<T>> = rows.iter().zip(&assign).filter(|(_, &a)| a == k).map(|(x, _)| x).collect();
        let count = members.len();
        let cov = if count >= 2 {
            members.iter().fold(Matrix3::zeros(), |a, x| {
                let d = *x - centers[k];
                a + d * d.transpose()
            }) / T::from_usize_lossy(count)
        } else {
            global_cov / T::from_usize_lossy(z)
        };
        covariances.push(cov + floor);
        weights.push(T::from_usize_lossy(count.max(1)));
    }
    let wsum = weights.iter().fold(T::zero(), |a, &b| a + b);
    GmmModel {
        weights: weights.into_iter().map(|w| w / wsum).collect(),
        means: centers,
        covariances,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    components: usize,
    weights: Vec<f64>,
    /// Each mean as `[t, x, y]`.
    means: Vec<[f64; 3]>,
    /// Each covariance as 9 values, row-major over `(t, x, y)`.
    covariances: Vec<[f64; 9]>,
}

impl GmmModel<f64> {
    /// Versioned JSON document, covariances row-major.
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            components: self.components(),
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| [m[0], m[1], m[2]]).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| {
                    let mut out = [0.0; 9];
                    for r in 0..3 {
                        for col in 0..3 {
                            out[r * 3 + col] = c[(r, col)];
                        }
                    }
                    out
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GmmError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| GmmError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(GmmError::Format(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, got {} v{}",
                file.format, file.version
            )));
        }
        if file.components != file.weights.len() {
            return Err(GmmError::Format("component count disagrees with weights".into()));
        }
        Self::new(
            file.weights,
            file.means.iter().map(|m| Vector3::new(m[0], m[1], m[2])).collect(),
            file.covariances.iter().map(|c| Matrix3::from_row_slice(c)).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn sample_moments(rows: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
        let n = rows.len() as f64;
        let mean = rows.iter().fold(Vector3::zeros(), |a, x| a + x) / n;
        let cov = rows.iter().fold(Matrix3::zeros(), |a, x| {
            let d = x - mean;
            a + d * d.transpose()
        }) / n;
        (mean, cov)
    }

    fn noisy_writings(seed: u64, l: usize, n: usize) -> StyleDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.002).unwrap();
        let writings: Vec<WaypointSeq<f64>> = (0..l)
            .map(|_| {
                let pts = (0..n)
                    .map(|i| {
                        let s = i as f64 / (n - 1) as f64;
                        Point::new(
                            0.05 + 0.2 * s + noise.sample(&mut rng),
                            0.1 + 0.05 * (3.0 * s).sin() + noise.sample(&mut rng),
                        )
                    })
                    .collect();
                WaypointSeq::uniform(pts, 1.0).unwrap()
            })
            .collect();
        StyleDataset::from_writings(&writings)
    }

    #[test]
    fn single_component_matches_sample_moments() {
        let data = noisy_writings(3, 3, 60);
        let fit = fit_gmm(&data, 1, 0).unwrap();
        let (mean, cov) = sample_moments(&data.rows());
        assert!((fit.model.means()[0] - mean).abs().max() < 1e-9);
        let expected = cov + Matrix3::identity() * 1e-6;
        assert!((fit.model.covariances()[0] - expected).abs().max() < 1e-9);
        assert_eq!(fit.model.weights(), &[1.0]);
    }

    #[test]
    fn separated_clouds_recover_centroids_and_proportions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let centers = [Vector3::new(0.2, 0.05, 0.05), Vector3::new(0.8, 0.3, 0.25)];
        let counts = [300usize, 100];
        let mut samples = Vec::new();
        let mut clouds: Vec<Vec<Vector3<f64>>> = vec![Vec::new(), Vec::new()];
        for (k, (&c, &cnt)) in centers.iter().zip(&counts).enumerate() {
            for _ in 0..cnt {
                let x = c + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                clouds[k].push(x);
                samples.push((x[0], Point::new(x[1], x[2])));
            }
        }
        let data = StyleDataset::new(samples, 1);
        let fit = fit_gmm(&data, 2, 1).unwrap();
        for (k, cloud) in clouds.iter().enumerate() {
            let (centroid, _) = sample_moments(cloud);
            let best = fit
                .model
                .means()
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - centroid).norm().partial_cmp(&(b.1 - centroid).norm()).unwrap())
                .unwrap();
            assert!((best.1 - centroid).abs().max() < 1e-3, "cloud {k}");
            let expected_weight = counts[k] as f64 / 400.0;
            assert!((fit.model.weights()[best.0] - expected_weight).abs() < 1e-3);
        }
    }

    #[test]
    fn eight_components_on_three_writings() {
        let data = noisy_writings(9, 3, 70);
        let fit = fit_gmm(&data, 8, 2).unwrap();
        assert_eq!(fit.model.components(), 8);
        assert_eq!(fit.pruned, 0);
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        for c in fit.model.covariances() {
            assert!(c.symmetric_eigenvalues().min() >= 1e-6 * (1.0 - 1e-9));
        }
    }

    #[test]
    fn too_few_samples_is_rejected() {
        let data = StyleDataset::new(vec![(0.0, Point::new(0.0, 0.0)); 7], 1);
        assert!(matches!(fit_gmm(&data, 2, 0), Err(GmmError::TooFewSamples { .. })));
    }

    #[test]
    fn collapsing_components_are_pruned() {
        // Two distinct points repeated: a third component has nothing to explain.
        let mut samples = vec![(0.0, Point::new(0.0, 0.0)); 20];
        samples.extend(vec![(1.0, Point::new(1.0, 1.0)); 20]);
        let data = StyleDataset::new(samples, 1);
        let fit = fit_gmm(&data, 3, 4).unwrap();
        assert!(fit.model.components() < 3);
        assert_eq!(fit.pruned, 3 - fit.model.components());
    }

    #[test]
    fn fitting_is_deterministic_for_a_seed() {
        let data = noisy_writings(1, 3, 50);
        let a = fit_gmm(&data, 4, 17).unwrap();
        let b = fit_gmm(&data, 4, 17).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn json_round_trip() {
        let data = noisy_writings(2, 3, 40);
        let model = fit_gmm(&data, 3, 0).unwrap().model;
        let back = GmmModel::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn fits_in_single_precision() {
        let data = noisy_writings(4, 3, 40);
        let samples: Vec<(f32, Point<f32>)> = data
            .samples()
            .iter()
            .map(|(t, p)| (*t as f32, Point::new(p.x as f32, p.y as f32)))
            .collect();
        let mut opts = EmOptions::<f32>::default();
        opts.cov_floor = 1e-5;
        let fit = fit_gmm_with(&StyleDataset::new(samples, 3), 2, 0, &opts).unwrap();
        assert_eq!(fit.model.components(), 2);
    }
}
