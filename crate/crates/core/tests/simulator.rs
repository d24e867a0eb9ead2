use penmentor::impedance::{compose, ImpedanceConfig, ImpedanceState};
use penmentor::scalar::Point;
use penmentor::sim::{simulate_guided, LearnerModel, LearnerParams, SimConfig};
use penmentor::trajectory::WaypointSeq;

fn loop_stroke(n: usize, duration: f64, phase: f64) -> WaypointSeq<f64> {
    let pts = (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            Point::new(
                0.1 * s + 0.03 * (2.0 * std::f64::consts::PI * s + phase).sin(),
                0.04 * (3.0 * std::f64::consts::PI * s).sin(),
            )
        })
        .collect();
    WaypointSeq::uniform(pts, duration).unwrap()
}

fn learner(seed: u64) -> LearnerModel {
    let mut l = LearnerModel::new("P", 1, LearnerParams::default(), seed).unwrap();
    l.set_style("c", vec![loop_stroke(80, 2.0, 0.0)]);
    l
}

fn rms(a: &[Point<f64>], b: &[Point<f64>]) -> f64 {
    (a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn stiffest_guidance_tracks_within_two_millimeters() {
    let cfg = ImpedanceConfig::default();
    let imp = compose(cfg.k_max, Point::zeros(), &cfg);
    for seed in 0..10 {
        let l = learner(seed);
        let teaching = loop_stroke(80, 2.0, 0.6);
        let rec = simulate_guided(&l, "c", 0, &teaching, &imp, &SimConfig::default(), 0).unwrap();
        let err = rms(&rec.actual, &rec.desired);
        assert!(err < 0.002, "seed {seed}: {err}");
    }
}

#[test]
fn without_guidance_the_pen_follows_the_learner() {
    let sigma = LearnerParams::default().motor_noise;
    for seed in 0..10 {
        let l = learner(seed);
        // The teaching trajectory only sets the clock when guidance is off.
        let teaching = loop_stroke(80, 2.0, 1.5);
        let rec = simulate_guided(&l, "c", 0, &teaching, &ImpedanceState::disengaged(), &SimConfig::default(), 3)
            .unwrap();
        let intent = l.stroke_style("c", 0).unwrap();
        let actual = rec.resample_actual(intent.timestamps()).unwrap();
        let err = rms(actual.points(), intent.points());
        assert!(err < 3.0 * sigma, "seed {seed}: {err}");
        assert!(rec.robot_force.iter().all(|f| *f == Point::zeros()));
    }
}

#[test]
fn learner_force_never_exceeds_the_cap() {
    let cfg = ImpedanceConfig::default();
    for (i, k) in [200.0, 450.0, 800.0, 1200.0].into_iter().enumerate() {
        let imp = compose(Point::new(k, k), Point::zeros(), &cfg);
        let mut l = learner(i as u64);
        l.params.force_cap = 5.0;
        let far = loop_stroke(80, 2.0, 3.0).map_points(|p| p + Point::new(0.04, -0.03));
        let rec = simulate_guided(&l, "c", 0, &far, &imp, &SimConfig::default(), 1).unwrap();
        let cap = l.params.force_cap;
        assert!(rec.learner_force.iter().all(|f| f.norm() <= cap * (1.0 + 1e-12)));
        assert!(rec.learner_force.iter().any(|f| f.norm() > 0.5 * cap), "cap never approached at k = {k}");
    }
}

#[test]
fn long_strokes_stay_stable_across_the_stiffness_range() {
    let cfg = ImpedanceConfig::default();
    let mut l = LearnerModel::new("P", 0, LearnerParams::default(), 9).unwrap();
    l.set_style("c", vec![loop_stroke(200, 10.0, 0.0)]);
    let teaching = loop_stroke(200, 10.0, 2.0);
    for k in [200.0, 500.0, 900.0, 1200.0] {
        let imp = compose(Point::new(k, 1400.0 - k), Point::zeros(), &cfg);
        let rec = simulate_guided(&l, "c", 0, &teaching, &imp, &SimConfig::default(), 0).unwrap();
        assert_eq!(rec.len(), 10_000);
        assert!(rec.actual.iter().all(|p| p.x.is_finite() && p.y.is_finite()));
        // The pen never strays far from the two trajectories it is pulled toward.
        let worst = rec
            .actual
            .iter()
            .zip(&rec.desired)
            .map(|(a, d)| (a - d).norm())
            .fold(0.0, f64::max);
        assert!(worst < 0.1, "k = {k}: {worst}");
    }
}

#[test]
fn reruns_are_bit_identical() {
    let cfg = ImpedanceConfig::default();
    let imp = compose(Point::new(500.0, 700.0), Point::new(20.0, 0.0), &cfg);
    let teaching = loop_stroke(80, 2.0, 0.4);
    let run = |seed, trial| simulate_guided(&learner(seed), "c", 0, &teaching, &imp, &SimConfig::default(), trial).unwrap();
    let a = run(4, 7);
    assert_eq!(a, run(4, 7));
    assert_eq!(a.to_csv(), run(4, 7).to_csv());
    assert_ne!(a, run(4, 8));
    assert_ne!(a, run(5, 7));
}
