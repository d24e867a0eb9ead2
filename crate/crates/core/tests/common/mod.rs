#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use penmentor::gmm::{GmmModel, StyleDataset};
use penmentor::scalar::Point;
use penmentor::trajectory::WaypointSeq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random SPD matrix with time variance near `st²` and spatial near `sx²`.
pub fn random_spd3(rng: &mut ChaCha8Rng, st: f64, sx: f64) -> Matrix3<f64> {
    let scale = Matrix3::from_diagonal(&Vector3::new(st, sx, sx));
    let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let s = scale * (a * a.transpose() + Matrix3::identity() * 0.3) * scale;
    (s + s.transpose()) * 0.5
}

pub fn random_model(rng: &mut ChaCha8Rng, z: usize) -> GmmModel<f64> {
    let raw: Vec<f64> = (0..z).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let drift = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    let means = (0..z)
        .map(|k| {
            Vector3::new(
                (k as f64 + rng.random_range(0.2..0.8)) / z as f64,
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            )
        })
        .collect();
    let covs = (0..z).map(|_| random_spd3(rng, 0.5 / z as f64, 0.01)).collect();
    GmmModel::new(weights, means, covs).unwrap()
}

/// `count` noisy writings of a random smooth curve, `n` waypoints each over [0, 1].
pub fn random_writings(rng: &mut ChaCha8Rng, count: usize, n: usize, noise: f64) -> Vec<WaypointSeq<f64>> {
    let c: Vec<f64> = (0..6).map(|_| rng.random_range(-0.1..0.1)).collect();
    let normal = Normal::new(0.0, noise).unwrap();
    (0..count)
        .map(|_| {
            let pts = (0..n)
                .map(|i| {
                    let s = i as f64 / (n - 1) as f64;
                    Point::new(
                        c[0] + c[1] * s + c[2] * (3.0 * s).sin() + normal.sample(rng),
                        c[3] + c[4] * s * s + c[5] * (2.0 * s).cos() + normal.sample(rng),
                    )
                })
                .collect();
            WaypointSeq::uniform(pts, 1.0).unwrap()
        })
        .collect()
}

pub fn random_dataset(rng: &mut ChaCha8Rng, count: usize, n: usize, noise: f64) -> StyleDataset<f64> {
    let w = random_writings(rng, count, n, noise);
    StyleDataset::from_writings(w.iter())
}
