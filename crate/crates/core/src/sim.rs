//! Simulated learner and pen dynamics.
//!
//! The pen is a unit point mass with a viscous floor, driven by the robot's
//! impedance force and the learner's own force. The learner pulls toward an
//! intended trajectory (latent style plus motor noise); how hard it pulls
//! depends on how stiff the robot is, and it assimilates what it experienced
//! in proportion to that engagement and to how close the experience was to
//! its intent.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impedance::{control_force, ImpedanceState};
use crate::scalar::{Mat2, Point};
use crate::seed::derive_seed;
use crate::trajectory::{centroid, interpolate, HermiteSpline, SequenceError, WaypointSeq};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("learner has no style for character {0:?}")]
    MissingStyle(String),
    #[error("character {character:?} has no stroke {stroke}")]
    MissingStroke { character: String, stroke: usize },
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },
    #[error("experienced trajectory has {got} waypoints, style has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid learner parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// Per-learner behavior constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerParams {
    /// N/m, pull toward the intended trajectory.
    pub own_stiffness: f64,
    /// N·s/m.
    pub own_damping: f64,
    /// N.
    pub force_cap: f64,
    /// Position noise standard deviation, meters.
    pub motor_noise: f64,
    /// Waypoints between independent motor-noise knots during guided writing.
    pub noise_knot_spacing: usize,
    /// η in `[0, 1]`.
    pub adaptation_rate: f64,
    /// Engagement against the stiffest robot; 1 against the most compliant.
    pub engagement_floor: f64,
    /// Meters; experiences this far from intent are assimilated at `e^{-1/2}`.
    pub assimilation_radius: f64,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            own_stiffness: 300.0,
            own_damping: 35.0,
            force_cap: 40.0,
            motor_noise: 0.0015,
            noise_knot_spacing: 8,
            adaptation_rate: 0.3,
            engagement_floor: 0.2,
            assimilation_radius: 0.02,
        }
    }
}

impl LearnerParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParameter(m.into()));
        if !(0.0..=1.0).contains(&self.adaptation_rate) {
            return bad("adaptation_rate must lie in [0, 1]");
        }
        if !(self.force_cap > 0.0) {
            return bad("force_cap must be positive");
        }
        if !(self.motor_noise >= 0.0) || !(self.own_stiffness >= 0.0) || !(self.own_damping >= 0.0) {
            return bad("motor_noise, own_stiffness and own_damping must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.engagement_floor) {
            return bad("engagement_floor must lie in [0, 1]");
        }
        if !(self.assimilation_radius > 0.0) || self.noise_knot_spacing == 0 {
            return bad("assimilation_radius and noise_knot_spacing must be positive");
        }
        Ok(())
    }
}

/// Pen dynamics constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// kg.
    pub mass: f64,
    /// N·s/m.
    pub viscous_floor: f64,
    /// Integration step, seconds.
    pub sample_interval: f64,
    /// Robot stiffness at which engagement is still full, N/m.
    pub k_engaged: f64,
    /// Robot stiffness at which engagement reaches its floor, N/m.
    pub k_passive: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mass: 1.0,
            viscous_floor: 5.0,
            sample_interval: 0.001,
            k_engaged: 200.0,
            k_passive: 1200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerModel {
    pub id: String,
    /// Proficiency level, 0 (novice) to 2 (fluent).
    pub level: u8,
    pub params: LearnerParams,
    pub seed: u64,
    styles: BTreeMap<String, Vec<WaypointSeq<f64>>>,
}

impl LearnerModel {
    pub fn new(id: impl Into<String>, level: u8, params: LearnerParams, seed: u64) -> Result<Self, SimError> {
        params.validate()?;
        Ok(Self {
            id: id.into(),
            level,
            params,
            seed,
            styles: BTreeMap::new(),
        })
    }

    pub fn set_style(&mut self, character: impl Into<String>, strokes: Vec<WaypointSeq<f64>>) {
        self.styles.insert(character.into(), strokes);
    }

    pub fn style(&self, character: &str) -> Result<&[WaypointSeq<f64>], SimError> {
        self.styles
            .get(character)
            .map(Vec::as_slice)
            .ok_or_else(|| SimError::MissingStyle(character.into()))
    }

    pub fn stroke_style(&self, character: &str, stroke: usize) -> Result<&WaypointSeq<f64>, SimError> {
        self.style(character)?.get(stroke).ok_or_else(|| SimError::MissingStroke {
            character: character.into(),
            stroke,
        })
    }

    /// Latent style for `character`: `reference` bent by a random smooth
    /// field whose RMS displacement is `magnitude` (±20%).
    pub fn init_style(&mut self, character: &str, reference: &[WaypointSeq<f64>], magnitude: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[b"style", character.as_bytes()]));
        let strokes = distort(reference, magnitude * rng.random_range(0.8..1.2), &mut rng);
        self.set_style(character, strokes);
    }

    /// Moves the latent style a fraction `gain` of the way to `reference`.
    pub fn shift_toward(&mut self, character: &str, reference: &[WaypointSeq<f64>], gain: f64) -> Result<(), SimError> {
        let style = self.style(character)?.to_vec();
        let shifted = style
            .iter()
            .zip(reference)
            .map(|(s, r)| blend(s, r.points(), &vec![gain; s.len()]))
            .collect::<Result<Vec<_>, _>>()?;
        self.set_style(character, shifted);
        Ok(())
    }

    /// Engagement in `[engagement_floor, 1]` against robot stiffness `k_d`.
    pub fn engagement(&self, k_d: Point<f64>, cfg: &SimConfig) -> f64 {
        let k = 0.5 * (k_d.x + k_d.y);
        let span = (cfg.k_passive - cfg.k_engaged).max(f64::EPSILON);
        let u = ((k - cfg.k_engaged) / span).clamp(0.0, 1.0);
        1.0 - (1.0 - self.params.engagement_floor) * u
    }
}

/// Latent style plus smooth motor noise, per stroke.
pub fn simulate_unguided(learner: &LearnerModel, character: &str, trial: u64) -> Result<Vec<WaypointSeq<f64>>, SimError> {
    let style = learner.style(character)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        learner.seed,
        &[b"unguided", character.as_bytes(), &trial.to_le_bytes()],
    ));
    let p = &learner.params;
    style
        .iter()
        .map(|s| Ok(s.with_points(knot_noise(s.points(), p.motor_noise, p.noise_knot_spacing, &mut rng))?))
        .collect()
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("non-negative finite sigma")
}

/// Dense record of one guided stroke, sampled every `T_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub timestamps: Vec<f64>,
    pub actual: Vec<Point<f64>>,
    pub desired: Vec<Point<f64>>,
    pub learner_force: Vec<Point<f64>>,
    pub robot_force: Vec<Point<f64>>,
    pub duration: f64,
}

pub const RECORD_HEADER: &str = "step,t,x,y,xd,yd,Fhx,Fhy,Frx,Fry";

impl InteractionRecord {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Actual pen positions at the given times.
    pub fn resample_actual(&self, timestamps: &[f64]) -> Result<WaypointSeq<f64>, SequenceError> {
        let pts = timestamps
            .iter()
            .map(|&t| interpolate(&self.timestamps, &self.actual, t))
            .collect();
        WaypointSeq::new(timestamps.to_vec(), pts)
    }

    /// Mean Euclidean norm of the learner force.
    pub fn mean_learner_force(&self) -> f64 {
        if self.learner_force.is_empty() {
            return 0.0;
        }
        self.learner_force.iter().map(|f| f.norm()).sum::<f64>() / self.learner_force.len() as f64
    }

    /// Columnar text with [`RECORD_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.len() + 1));
        out.push_str(RECORD_HEADER);
        out.push('\n');
        for i in 0..self.len() {
            let (x, d, h, r) = (self.actual[i], self.desired[i], self.learner_force[i], self.robot_force[i]);
            out.push_str(&format!(
                "{i},{},{},{},{},{},{},{},{},{}\n",
                self.timestamps[i], x.x, x.y, d.x, d.y, h.x, h.y, r.x, r.y
            ));
        }
        out
    }
}

/// One stroke of physically guided writing toward `teaching`.
///
/// With zero stiffness the pen starts on the learner's intent, otherwise on
/// the teaching trajectory.
pub fn simulate_guided(
    learner: &LearnerModel,
    character: &str,
    stroke: usize,
    teaching: &WaypointSeq<f64>,
    impedance: &ImpedanceState<f64>,
    cfg: &SimConfig,
    trial: u64,
) -> Result<InteractionRecord, SimError> {
    let latent = learner.stroke_style(character, stroke)?;
    let p = &learner.params;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        learner.seed,
        &[b"guided", character.as_bytes(), &(stroke as u64).to_le_bytes(), &trial.to_le_bytes()],
    ));
    let target = latent.with_points(knot_noise(latent.points(), p.motor_noise, p.noise_knot_spacing, &mut rng))?;
    let intent = HermiteSpline::new(&target);
    let guide = HermiteSpline::new(teaching);
    let engagement = learner.engagement(impedance.k_d, cfg);
    let disengaged = impedance.k_d == Point::zeros() && impedance.b_d == Point::zeros();

    let duration = teaching.duration();
    let ts = cfg.sample_interval;
    let steps = ((duration / ts) - 1e-9).ceil().max(1.0) as usize;
    let start = if disengaged { intent.eval(0.0) } else { guide.eval(0.0) };
    let mut x = start.position;
    let mut v = start.velocity;

    let mut rec = InteractionRecord {
        timestamps: Vec::with_capacity(steps),
        actual: Vec::with_capacity(steps),
        desired: Vec::with_capacity(steps),
        learner_force: Vec::with_capacity(steps),
        robot_force: Vec::with_capacity(steps),
        duration,
    };
    for k in 0..steps {
        let t = k as f64 * ts;
        let want = intent.eval(t);
        let d = guide.eval(t);
        let f_r = control_force(impedance, x, v, d.position, d.velocity);
        let drive = (want.position - x) * p.own_stiffness
            + (want.velocity - v) * p.own_damping
            + want.acceleration * cfg.mass
            + want.velocity * cfg.viscous_floor;
        let mut f_h = drive * engagement;
        let norm = f_h.norm();
        if norm > p.force_cap {
            f_h *= p.force_cap / norm;
        }
        rec.timestamps.push(t);
        rec.actual.push(x);
        rec.desired.push(d.position);
        rec.learner_force.push(f_h);
        rec.robot_force.push(f_r);

        let a = (f_r + f_h - v * cfg.viscous_floor) / cfg.mass;
        v += a * ts;
        x += v * ts;
        if !(x.x.is_finite() && x.y.is_finite() && v.x.is_finite() && v.y.is_finite()) {
            return Err(SimError::Diverged { step: k });
        }
    }
    Ok(rec)
}

/// Noise drawn at every `spacing`-th waypoint (and the last) and linearly
/// interpolated in between.
fn knot_noise(points: &[Point<f64>], sigma: f64, spacing: usize, rng: &mut ChaCha8Rng) -> Vec<Point<f64>> {
    let n = points.len();
    let noise = gaussian(sigma);
    let mut knots: Vec<usize> = (0..n).step_by(spacing).collect();
    if *knots.last().unwrap() != n - 1 {
        knots.push(n - 1);
    }
    let values: Vec<Point<f64>> = knots
        .iter()
        .map(|_| Point::new(noise.sample(rng), noise.sample(rng)))
        .collect();
    let mut out = Vec::with_capacity(n);
    for w in 0..knots.len() - 1 {
        let (a, b) = (knots[w], knots[w + 1]);
        for i in a..b {
            let s = (i - a) as f64 / (b - a) as f64;
            out.push(points[i] + values[w] * (1.0 - s) + values[w + 1] * s);
        }
    }
    out.push(points[n - 1] + values[knots.len() - 1]);
    if n == 1 {
        out.truncate(1);
    }
    out
}

fn blend(style: &WaypointSeq<f64>, toward: &[Point<f64>], rates: &[f64]) -> Result<WaypointSeq<f64>, SimError> {
    if toward.len() != style.len() || rates.len() != style.len() {
        return Err(SimError::LengthMismatch {
            expected: style.len(),
            got: toward.len(),
        });
    }
    let pts = style
        .points()
        .iter()
        .zip(toward)
        .zip(rates)
        .map(|((s, e), &r)| s * (1.0 - r) + e * r)
        .collect();
    Ok(style.with_points(pts)?)
}

/// `latent ← (1 − η)·latent + η·experienced` for one stroke.
pub fn learner_adapt(
    learner: &LearnerModel,
    character: &str,
    stroke: usize,
    experienced: &WaypointSeq<f64>,
) -> Result<LearnerModel, SimError> {
    let n = learner.stroke_style(character, stroke)?.len();
    learner_adapt_weighted(learner, character, stroke, experienced, &vec![1.0; n])
}

/// Per-waypoint rates `η·w_n`, `w_n ∈ [0, 1]`.
pub fn learner_adapt_weighted(
    learner: &LearnerModel,
    character: &str,
    stroke: usize,
    experienced: &WaypointSeq<f64>,
    weights: &[f64],
) -> Result<LearnerModel, SimError> {
    let style = learner.stroke_style(character, stroke)?;
    let eta = learner.params.adaptation_rate;
    let rates: Vec<f64> = weights.iter().map(|w| eta * w.clamp(0.0, 1.0)).collect();
    let updated = blend(style, experienced.points(), &rates)?;
    let mut out = learner.clone();
    out.styles.get_mut(character).expect("style checked above")[stroke] = updated;
    Ok(out)
}

/// `engagement · exp(−|experienced − latent|² / 2ρ²)` per waypoint.
pub fn assimilation_weights(
    learner: &LearnerModel,
    character: &str,
    stroke: usize,
    experienced: &WaypointSeq<f64>,
    engagement: f64,
) -> Result<Vec<f64>, SimError> {
    let style = learner.stroke_style(character, stroke)?;
    if style.len() != experienced.len() {
        return Err(SimError::LengthMismatch {
            expected: style.len(),
            got: experienced.len(),
        });
    }
    let two_rho2 = 2.0 * learner.params.assimilation_radius.powi(2);
    Ok(style
        .points()
        .iter()
        .zip(experienced.points())
        .map(|(s, e)| engagement * (-(e - s).norm_squared() / two_rho2).exp())
        .collect())
}

/// Smooth random displacement: a quadratic warp of the whole character
/// plus a small rotation and scaling of each stroke, rescaled to the given
/// RMS magnitude.
fn distort(reference: &[WaypointSeq<f64>], magnitude: f64, rng: &mut ChaCha8Rng) -> Vec<WaypointSeq<f64>> {
    let all: Vec<Point<f64>> = reference.iter().flat_map(|s| s.points().iter().copied()).collect();
    if all.is_empty() {
        return reference.to_vec();
    }
    let center = centroid(&all);
    let half = all.iter().map(|p| (p - center).amax()).fold(0.0, f64::max).max(1e-9);
    let unit = gaussian(1.0);
    let mut draw = || unit.sample(rng);
    let linear = Mat2::new(draw(), draw(), draw(), draw());
    let quad: [Point<f64>; 3] = [
        Point::new(draw(), draw()),
        Point::new(draw(), draw()),
        Point::new(draw(), draw()),
    ];
    let per_stroke: Vec<(f64, f64)> = reference.iter().map(|_| (draw(), draw())).collect();

    let displacements: Vec<Vec<Point<f64>>> = reference
        .iter()
        .zip(&per_stroke)
        .map(|(stroke, &(rot, scale))| {
            let c = centroid(stroke.points());
            let size = stroke.points().iter().map(|p| (p - c).amax()).fold(0.0, f64::max).max(1e-9);
            stroke
                .points()
                .iter()
                .map(|p| {
                    let u = (p - center) / half;
                    let warp = linear * u + quad[0] * (u.x * u.x) + quad[1] * (u.x * u.y) + quad[2] * (u.y * u.y);
                    let r = (p - c) / size;
                    warp + Point::new(-r.y, r.x) * rot + r * scale
                })
                .collect()
        })
        .collect();
    let count = all.len() as f64;
    let rms = (displacements.iter().flatten().map(|d| d.norm_squared()).sum::<f64>() / count).sqrt();
    let k = if rms > 0.0 { magnitude / rms } else { 0.0 };
    reference
        .iter()
        .zip(&displacements)
        .map(|(s, d)| {
            let pts = s.points().iter().zip(d).map(|(p, d)| p + d * k).collect();
            s.with_points(pts).expect("same length and timestamps")
        })
        .collect()
}
