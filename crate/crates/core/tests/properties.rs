mod common;

use penmentor::dtw::dtw_align;
use penmentor::gmrgp::{build_kernel, fuse_gaussians, gp_posterior, Observation, TrajectoryPosterior};
use penmentor::impedance::{compose, control_force, damping, psi, update_engagement, ImpedanceConfig};
use penmentor::dtw::DeviationProfile;
use penmentor::metrics::{improvement_percent, metric_m1, metric_m2};
use penmentor::scalar::{min_eigenvalue_sym2, Mat2, Point};
use penmentor::trajectory::WaypointSeq;
use penmentor::viapoint::{extract_via_points, extract_via_points_with, suppression_radius, ViaPointOptions};
use proptest::prelude::*;

fn pt() -> impl Strategy<Value = Point<f64>> {
    (-0.2..0.2f64, -0.2..0.2f64).prop_map(|(x, y)| Point::new(x, y))
}

fn polyline(min: usize, max: usize) -> impl Strategy<Value = Vec<Point<f64>>> {
    prop::collection::vec(pt(), min..max)
}

/// A wiggly stroke with distinct consecutive points.
fn stroke(n: usize) -> impl Strategy<Value = WaypointSeq<f64>> {
    prop::collection::vec(-1.0..1.0f64, 6).prop_map(move |c| {
        let pts = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                Point::new(
                    0.1 * s + 0.03 * c[0] * (6.0 * s + c[1]).sin(),
                    0.05 * c[2] * s * s + 0.03 * c[3] * (9.0 * s + c[4]).cos() + 0.01 * c[5] * s,
                )
            })
            .collect();
        WaypointSeq::uniform(pts, 1.0).unwrap()
    })
}

fn writing(strokes: usize) -> impl Strategy<Value = Vec<WaypointSeq<f64>>> {
    prop::collection::vec(stroke(30), strokes)
}

fn profile(e: Point<f64>) -> DeviationProfile<f64> {
    DeviationProfile { per_waypoint: vec![e; 4] }
}

proptest! {
    #[test]
    fn dtw_self_distance_is_zero(a in polyline(1, 30)) {
        prop_assert_eq!(dtw_align(&a, &a).unwrap().distance, 0.0);
    }

    #[test]
    fn dtw_is_symmetric(a in polyline(1, 25), b in polyline(1, 25)) {
        let ab = dtw_align(&a, &b).unwrap().distance;
        let ba = dtw_align(&b, &a).unwrap().distance;
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
    }

    #[test]
    fn dtw_ignores_a_shared_translation(a in polyline(1, 25), b in polyline(1, 25), shift in pt()) {
        let d = dtw_align(&a, &b).unwrap().distance;
        let a2: Vec<_> = a.iter().map(|p| p + shift).collect();
        let b2: Vec<_> = b.iter().map(|p| p + shift).collect();
        prop_assert!((dtw_align(&a2, &b2).unwrap().distance - d).abs() < 1e-12);
    }

    #[test]
    fn dtw_is_bounded_by_the_diagonal(ab in polyline(1, 25).prop_flat_map(|a| {
        let n = a.len();
        (Just(a), polyline(n, n + 1))
    })) {
        let (a, b) = ab;
        let diagonal: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).sum();
        prop_assert!(dtw_align(&a, &b).unwrap().distance <= diagonal + 1e-12);
    }

    #[test]
    fn via_points_are_waypoints_spaced_by_the_radius(s in stroke(60), h in 1usize..10) {
        let set = extract_via_points(&s, h).unwrap();
        for v in &set.entries {
            prop_assert_eq!(v.point, s.points()[v.source_index]);
            prop_assert_eq!(v.t, s.timestamps()[v.source_index]);
        }
        let idx: Vec<usize> = set.interior().map(|v| v.source_index).collect();
        let r = suppression_radius(60, h);
        for (i, a) in idx.iter().enumerate() {
            for b in &idx[i + 1..] {
                prop_assert!(a.abs_diff(*b) >= r);
            }
        }
    }

    #[test]
    fn more_via_points_keep_the_earlier_picks(s in stroke(60), h in 1usize..10) {
        let opts = ViaPointOptions { radius: Some(4), ..ViaPointOptions::default() };
        let small = extract_via_points_with(&s, h, &opts).unwrap();
        let large = extract_via_points_with(&s, h + 1, &opts).unwrap();
        let big: Vec<usize> = large.interior().map(|v| v.source_index).collect();
        for v in small.interior() {
            prop_assert!(big.contains(&v.source_index));
        }
    }

    #[test]
    fn psi_is_bounded_and_grows_with_error(d1 in 0.0..0.2f64, d2 in 0.0..0.2f64, alpha in 100.0..5000.0f64, pi in 0.01..0.1f64) {
        let (a, b) = (psi(d1, pi, alpha), psi(d2, pi, alpha));
        prop_assert!(a > -1.0 && a < 1.0 || a.abs() == 1.0 && (alpha * (d1 * d1 - pi * pi) - pi).abs() > 30.0);
        if d1 < d2 {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn psi_sign_follows_the_boundary(d in 0.0..0.2f64, alpha in 100.0..5000.0f64, pi in 0.01..0.1f64) {
        let arg = alpha * (d * d - pi * pi) - pi;
        prop_assume!(arg.abs() > 1e-12);
        prop_assert_eq!(psi(d, pi, alpha) > 0.0, arg > 0.0);
    }

    #[test]
    fn composed_stiffness_stays_in_range(kr in (0.0..3000.0f64, 0.0..3000.0f64), ks in (0.0..3000.0f64, 0.0..3000.0f64)) {
        let cfg = ImpedanceConfig::default();
        let s = compose(Point::new(kr.0, kr.1), Point::new(ks.0, ks.1), &cfg);
        for k in [s.k_d.x, s.k_d.y] {
            prop_assert!((200.0..=1200.0).contains(&k));
        }
        prop_assert_eq!(s.b_d, damping(s.k_d));
        prop_assert_eq!(s.b_d.x, 0.5 * s.k_d.x.sqrt());
    }

    #[test]
    fn engagement_chain_keeps_the_invariants(errors in prop::collection::vec((0.0..0.1f64, 0.0..0.1f64), 1..12)) {
        let cfg = ImpedanceConfig::default();
        let k_r = Point::new(600.0, 400.0);
        let mut k_s = Point::zeros();
        for (ex, ey) in errors {
            k_s = update_engagement(k_s, &profile(Point::new(ex, ey)), &cfg);
            prop_assert!(k_s.x >= 0.0 && k_s.y >= 0.0);
            let s = compose(k_r, k_s, &cfg);
            prop_assert!(s.k_d.x >= 200.0 && s.k_d.x <= 1200.0 && s.k_d.y >= 200.0 && s.k_d.y <= 1200.0);
            prop_assert_eq!(s.b_d, damping(s.k_d));
        }
    }

    #[test]
    fn control_force_is_linear(a in pt(), b in pt(), lambda in -5.0..5.0f64) {
        let cfg = ImpedanceConfig::default();
        let s = compose(Point::new(700.0, 300.0), Point::zeros(), &cfg);
        let f = |da: Point<f64>, db: Point<f64>| control_force(&s, da, db, Point::zeros(), Point::zeros());
        let lhs = f(a * lambda, b * lambda);
        let rhs = f(a, b) * lambda;
        prop_assert!((lhs - rhs).amax() <= 1e-12 * rhs.amax().max(1.0));
        // Only differences from the desired state matter.
        let shifted = control_force(&s, a + b, b, b, Point::zeros());
        prop_assert!((shifted - f(a, b)).amax() < 1e-9);
    }

    #[test]
    fn m1_ignores_a_whole_character_translation(a in polyline(2, 30), b in polyline(2, 30), shift in pt()) {
        let moved: Vec<_> = a.iter().map(|p| p + shift).collect();
        let d = metric_m1(&a, &b).unwrap();
        prop_assert!((metric_m1(&moved, &b).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn m2_ignores_per_stroke_translations(w in writing(3), r in writing(3), shifts in prop::collection::vec(pt(), 3)) {
        let moved: Vec<_> = w.iter().zip(&shifts).map(|(s, d)| s.map_points(|p| p + d)).collect();
        let a = metric_m2(&w, &r).unwrap().value;
        prop_assert!((metric_m2(&moved, &r).unwrap().value - a).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_symmetric(w in writing(2), r in writing(2)) {
        let m2 = |a: &[WaypointSeq<f64>], b: &[WaypointSeq<f64>]| metric_m2(a, b).unwrap().value;
        prop_assert!((m2(&w, &r) - m2(&r, &w)).abs() < 1e-12);
        let flat = |v: &[WaypointSeq<f64>]| v.iter().flat_map(|s| s.points().to_vec()).collect::<Vec<_>>();
        let (fw, fr) = (flat(&w), flat(&r));
        prop_assert!((metric_m1(&fw, &fr).unwrap() - metric_m1(&fr, &fw).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn improvement_ignores_a_common_scale(
        pre in prop::collection::vec(0.001..1.0f64, 1..8),
        post in prop::collection::vec(0.001..1.0f64, 1..8),
        k in 0.01..100.0f64,
    ) {
        let base = improvement_percent(&pre, &post).unwrap();
        let pre_k: Vec<f64> = pre.iter().map(|v| v * k).collect();
        let post_k: Vec<f64> = post.iter().map(|v| v * k).collect();
        let scaled = improvement_percent(&pre_k, &post_k).unwrap();
        prop_assert!((scaled - base).abs() <= 1e-9 * base.abs().max(1.0));
    }
}

fn single(mean: Point<f64>, cov: Mat2<f64>) -> TrajectoryPosterior<f64> {
    TrajectoryPosterior {
        timestamps: vec![0.0],
        means: vec![mean],
        covariances: vec![cov],
    }
}

fn spd() -> impl Strategy<Value = Mat2<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b, c, d)| {
        let m = Mat2::new(a, b, c, d);
        (m * m.transpose() + Mat2::identity() * 0.1) * 1e-3
    })
}

proptest! {
    #[test]
    fn fusion_is_associative(m in prop::collection::vec(pt(), 3), c in prop::collection::vec(spd(), 3)) {
        let g: Vec<_> = (0..3).map(|i| single(m[i], c[i])).collect();
        let left = fuse_gaussians(&fuse_gaussians(&g[0], &g[1], 1e-9).unwrap(), &g[2], 1e-9).unwrap();
        let right = fuse_gaussians(&g[0], &fuse_gaussians(&g[1], &g[2], 1e-9).unwrap(), 1e-9).unwrap();
        prop_assert!((left.means[0] - right.means[0]).amax() < 1e-8);
        prop_assert!((left.covariances[0] - right.covariances[0]).amax() < 1e-8);
    }

    #[test]
    fn fused_mean_lies_between_the_inputs(ma in pt(), mb in pt(), ca in spd(), cb in spd()) {
        let f = fuse_gaussians(&single(ma, ca), &single(mb, cb), 1e-9).unwrap();
        let m = f.means[0];
        let dist = |c: &Mat2<f64>, d: Point<f64>| (d.transpose() * c.try_inverse().unwrap() * d)[0];
        let gap_a = dist(&ca, ma - mb);
        let gap_b = dist(&cb, ma - mb);
        prop_assert!(dist(&ca, m - mb) <= gap_a * (1.0 + 1e-9) + 1e-15);
        prop_assert!(dist(&cb, m - ma) <= gap_b * (1.0 + 1e-9) + 1e-15);
    }
}

fn random_obs(rng: &mut impl rand::Rng, count: usize, noise: f64) -> Vec<Observation<f64>> {
    (0..count)
        .map(|_| Observation {
            t: rng.random_range(0.0..1.0),
            point: Point::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
            noise: Mat2::identity() * noise,
        })
        .collect()
}

#[test]
fn another_observation_never_raises_posterior_variance() {
    use rand::Rng;
    let mut rng = common::rng(77);
    for case in 0..60 {
        let z = rng.random_range(1..=4);
        let model = common::random_model(&mut rng, z);
        let ls: Vec<f64> = (0..z).map(|_| rng.random_range(0.05..0.3)).collect();
        let kernel = build_kernel(&model, &ls, Mat2::identity() * 1e-4).unwrap();
        let count = rng.random_range(1..8);
        let obs = random_obs(&mut rng, count, 1e-4);
        let queries: Vec<f64> = (0..15).map(|i| i as f64 / 14.0).collect();
        let prior = |t: f64| kernel.prior_mean(t);
        let fewer = gp_posterior(prior, &kernel, &obs[..obs.len() - 1], &queries).unwrap();
        let more = gp_posterior(prior, &kernel, &obs, &queries).unwrap();
        for q in 0..queries.len() {
            let scale = fewer.covariances[q].abs().max().max(1e-12);
            let gain = fewer.covariances[q] - more.covariances[q];
            assert!(min_eigenvalue_sym2(&gain) >= -1e-8 * scale, "case {case} query {q}");
        }
    }
}

#[test]
fn nearly_noiseless_observations_are_interpolated() {
    let mut rng = common::rng(78);
    for _ in 0..30 {
        let model = common::random_model(&mut rng, 3);
        let kernel = build_kernel(&model, &[0.2, 0.2, 0.2], Mat2::identity() * 1e-4).unwrap();
        let mut obs = random_obs(&mut rng, 4, 1e-12);
        obs.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        // Keep observations well separated so the Gram matrix stays usable.
        obs.dedup_by(|b, a| b.t - a.t < 0.15);
        let queries: Vec<f64> = obs.iter().map(|o| o.t).collect();
        match gp_posterior(|t| kernel.prior_mean(t), &kernel, &obs, &queries) {
            Ok(post) => {
                for (o, m) in obs.iter().zip(&post.means) {
                    assert!((o.point - m).amax() < 1e-6);
                }
            }
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn engagement_relaxes_below_the_threshold_and_stiffens_above() {
    let cfg = ImpedanceConfig::default();
    // Ψ = 0 at δ² = Π² + Π/α; a margin above that pushes Ψ positive.
    let boundary = (0.05f64 * 0.05 + 0.05 / 2000.0).sqrt();
    let mut k_s = Point::new(300.0, 300.0);
    let mut last = k_s;
    for _ in 0..5 {
        k_s = update_engagement(k_s, &profile(Point::new(0.01, 0.03)), &cfg);
        assert!(k_s.x < last.x || k_s.x == 0.0);
        assert!(k_s.y < last.y || k_s.y == 0.0);
        last = k_s;
    }
    for _ in 0..5 {
        k_s = update_engagement(k_s, &profile(Point::new(boundary + 0.005, boundary + 0.02)), &cfg);
        assert!(k_s.x > last.x && k_s.y > last.y);
        last = k_s;
    }
}
