//! One learner writing one character: pre-test, guided teaching
//! iterations and evaluation.
//!
//! Each teaching iteration is split into [`plan_iteration`], a pure function
//! of the session state, and [`record_iteration`], which ingests what was
//! actually written. The simulated loop and the live service both drive
//! sessions through these two calls.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::corpus::{CharacterSpec, CorpusError};
use crate::dtw::{deviation_profile, dtw_align, DeviationProfile, DtwError};
use crate::gmm::{fit_gmm_with, EmOptions, GmmError, GmmModel, StyleDataset};
use crate::gmr::style_mean_curve;
use crate::gmrgp::{generate_training_waypoints, GenerateOptions, GpError};
use crate::impedance::{compose, initial_stiffness, update_engagement, ImpedanceState};
use crate::scalar::{Mat2, Point};
use crate::seed::derive_seed;
use crate::sim::{
    assimilation_weights, learner_adapt_weighted, simulate_guided, simulate_unguided, InteractionRecord, LearnerModel,
    SimError,
};
use crate::trajectory::{interpolate, uniform_timestamps, SequenceError, WaypointSeq};
use crate::viapoint::{extract_character_via_points, ViaPointError, ViaPointOptions, ViaPointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "TEACHINGBOT")]
    TeachingBot,
    #[serde(rename = "FC")]
    Fc,
    #[serde(rename = "RGW")]
    Rgw,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::TeachingBot, Method::Fc, Method::Rgw];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::TeachingBot => "TEACHINGBOT",
            Method::Fc => "FC",
            Method::Rgw => "RGW",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "TEACHINGBOT" => Ok(Method::TeachingBot),
            "FC" => Ok(Method::Fc),
            "RGW" => Ok(Method::Rgw),
            _ => Err(format!("unknown method {s:?} (expected TEACHINGBOT, FC or RGW)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Pretest,
    Teaching,
    Evaluation,
    Complete,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is in phase {actual:?}, expected {expected:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("all {0} teaching iterations are done")]
    IterationOverflow(usize),
    #[error("writing has {got} strokes, character has {expected}")]
    StrokeCount { expected: usize, got: usize },
    #[error("stroke {stroke} has {got} points; at least 2 are needed")]
    ShortStroke { stroke: usize, got: usize },
    #[error("plan is for iteration {plan}, session is at {session}")]
    StalePlan { plan: usize, session: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dtw(#[from] DtwError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    ViaPoint(#[from] ViaPointError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// What the robot will do in one teaching iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingPlan {
    pub iteration: usize,
    /// `χ_d` per stroke, on the reference timestamps.
    pub teaching: Vec<WaypointSeq<f64>>,
    /// Posterior standard deviation per stroke and waypoint (TeachingBot only).
    pub bands: Vec<Vec<Point<f64>>>,
    pub via_points: Vec<ViaPointSet<f64>>,
    pub impedance: ImpedanceState<f64>,
    /// No haptic guidance; the learner writes freely while viewing the reference.
    pub free_writing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub h: usize,
    pub impedance: ImpedanceState<f64>,
    /// Mean over strokes of the normalized DTW between `χ_d` and the reference.
    pub teaching_dtw: f64,
    /// Mean learner force per waypoint; `None` when no forces were reported.
    pub mean_learner_force: Option<f64>,
    pub teaching: Vec<WaypointSeq<f64>>,
    pub actual: Vec<WaypointSeq<f64>>,
    #[serde(skip)]
    pub records: Vec<InteractionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub character: CharacterSpec<f64>,
    pub method: Method,
    pub seed: u64,
    pub phase: Phase,
    /// Reference strokes on the session's timestamps.
    pub reference: Vec<WaypointSeq<f64>>,
    /// `Δt_c`, the summed stroke durations.
    pub duration: f64,
    /// Most recent `L` writings per stroke, oldest first.
    pub d_l: Vec<Vec<WaypointSeq<f64>>>,
    pub d_v: Vec<ViaPointSet<f64>>,
    pub impedance: ImpedanceState<f64>,
    pub iteration: usize,
    pub history: Vec<IterationSummary>,
    /// Writings as conformed to the reference timestamps, one entry per trial.
    pub pretest: Vec<Vec<WaypointSeq<f64>>>,
    pub evaluation: Vec<Vec<WaypointSeq<f64>>>,
    pub initial_style: Vec<WaypointSeq<f64>>,
    pub final_style: Vec<WaypointSeq<f64>>,
    pub initial_deviation: Option<DeviationProfile<f64>>,
    pub last_error: Option<DeviationProfile<f64>>,
    raw_pretest: Vec<Vec<WaypointSeq<f64>>>,
}

impl SessionState {
    /// A fresh session waiting for pre-test writings.
    pub fn new(
        character: &CharacterSpec<f64>,
        method: Method,
        cfg: &ExperimentConfig,
        seed: u64,
    ) -> Result<Self, SessionError> {
        let reference = character.reference_waypoints(cfg.n, cfg.stroke_duration, cfg.workspace())?;
        let duration = reference.iter().map(|s| s.duration()).sum();
        Ok(Self {
            character: character.clone(),
            method,
            seed,
            phase: Phase::Pretest,
            d_l: vec![Vec::new(); reference.len()],
            reference,
            duration,
            d_v: Vec::new(),
            impedance: ImpedanceState::disengaged(),
            iteration: 0,
            history: Vec::new(),
            pretest: Vec::new(),
            evaluation: Vec::new(),
            initial_style: Vec::new(),
            final_style: Vec::new(),
            initial_deviation: None,
            last_error: None,
            raw_pretest: Vec::new(),
        })
    }

    pub fn stroke_count(&self) -> usize {
        self.reference.len()
    }

    /// Pre-test writings received so far.
    pub fn pretest_writings(&self) -> usize {
        self.raw_pretest.len() + self.pretest.len()
    }

    fn expect(&self, phase: Phase) -> Result<(), SessionError> {
        if self.phase != phase {
            return Err(SessionError::WrongPhase {
                expected: phase,
                actual: self.phase,
            });
        }
        Ok(())
    }

    fn check_strokes(&self, writing: &[WaypointSeq<f64>]) -> Result<(), SessionError> {
        if writing.len() != self.stroke_count() {
            return Err(SessionError::StrokeCount {
                expected: self.stroke_count(),
                got: writing.len(),
            });
        }
        for (stroke, s) in writing.iter().enumerate() {
            if s.len() < 2 {
                return Err(SessionError::ShortStroke { stroke, got: s.len() });
            }
        }
        Ok(())
    }

    /// Adds one unguided pre-test writing; after the `L`-th, encodes the
    /// initial style, sets the reference stiffness and enters teaching.
    pub fn submit_pretest(&mut self, writing: Vec<WaypointSeq<f64>>, cfg: &ExperimentConfig) -> Result<(), SessionError> {
        self.expect(Phase::Pretest)?;
        self.check_strokes(&writing)?;
        self.raw_pretest.push(writing);
        if self.raw_pretest.len() == cfg.l {
            self.finish_pretest(cfg)?;
        }
        Ok(())
    }

    fn finish_pretest(&mut self, cfg: &ExperimentConfig) -> Result<(), SessionError> {
        let strokes = self.stroke_count();
        let count = self.raw_pretest.len() as f64;
        let durations: Vec<f64> = (0..strokes)
            .map(|j| self.raw_pretest.iter().map(|w| w[j].duration()).sum::<f64>() / count)
            .collect();
        self.reference = self
            .reference
            .iter()
            .zip(&durations)
            .map(|(r, &d)| WaypointSeq::new(uniform_timestamps(r.len(), d), r.points().to_vec()))
            .collect::<Result<_, _>>()?;
        self.duration = durations.iter().sum();
        let raw = std::mem::take(&mut self.raw_pretest);
        self.pretest = raw
            .iter()
            .map(|w| self.conform(w))
            .collect::<Result<_, _>>()?;
        for writing in &self.pretest {
            for (j, s) in writing.iter().enumerate() {
                self.d_l[j].push(s.clone());
            }
        }
        self.initial_style = self.encode_style(&self.pretest, cfg, b"initial")?;
        let profiles = self
            .initial_style
            .iter()
            .zip(&self.reference)
            .map(|(s, r)| deviation_profile(s.points(), r.points()))
            .collect::<Result<Vec<_>, _>>()?;
        let deviation = DeviationProfile::concat(&profiles);
        let k_r = initial_stiffness(&deviation, &cfg.impedance);
        self.initial_deviation = Some(deviation);
        self.impedance = match self.method {
            Method::TeachingBot => compose(k_r, Point::zeros(), &cfg.impedance),
            Method::Rgw => compose(cfg.impedance.k_max, Point::zeros(), &cfg.impedance),
            Method::Fc => ImpedanceState {
                k_r,
                ..ImpedanceState::disengaged()
            },
        };
        self.phase = Phase::Teaching;
        Ok(())
    }

    /// Resamples each stroke onto the matching reference stroke's timestamps,
    /// stretching its own time span to the reference's.
    pub fn conform(&self, writing: &[WaypointSeq<f64>]) -> Result<Vec<WaypointSeq<f64>>, SessionError> {
        self.check_strokes(writing)?;
        writing
            .iter()
            .zip(&self.reference)
            .map(|(w, r)| conform_stroke(w, r.timestamps()))
            .collect()
    }

    /// Per-stroke GMR mean of a style fitted to `writings`.
    fn encode_style(
        &self,
        writings: &[Vec<WaypointSeq<f64>>],
        cfg: &ExperimentConfig,
        tag: &[u8],
    ) -> Result<Vec<WaypointSeq<f64>>, SessionError> {
        (0..self.stroke_count())
            .map(|j| {
                let data = StyleDataset::from_writings(writings.iter().map(|w| &w[j]));
                let seed = derive_seed(self.seed, &[tag, &(j as u64).to_le_bytes()]);
                let model = fit_style(&data, cfg, seed)?;
                Ok(style_mean_curve(&model, self.reference[j].timestamps()))
            })
            .collect()
    }

    /// Adds one evaluation writing; after the `L`-th, encodes the final style.
    pub fn submit_evaluation(
        &mut self,
        writing: Vec<WaypointSeq<f64>>,
        cfg: &ExperimentConfig,
    ) -> Result<(), SessionError> {
        self.expect(Phase::Evaluation)?;
        let conformed = self.conform(&writing)?;
        self.evaluation.push(conformed);
        if self.evaluation.len() == cfg.l {
            self.final_style = self.encode_style(&self.evaluation, cfg, b"final")?;
            self.phase = Phase::Complete;
        }
        Ok(())
    }

    /// Ends teaching early (or confirms it ended) and opens the evaluation.
    pub fn begin_evaluation(&mut self) -> Result<(), SessionError> {
        self.expect(Phase::Teaching)?;
        self.phase = Phase::Evaluation;
        Ok(())
    }
}

fn conform_stroke(writing: &WaypointSeq<f64>, target: &[f64]) -> Result<WaypointSeq<f64>, SessionError> {
    let (t0, t1) = (writing.timestamps()[0], writing.timestamps()[writing.len() - 1]);
    let (r0, r1) = (target[0], target[target.len() - 1]);
    let span = r1 - r0;
    let points = target
        .iter()
        .map(|&t| {
            let u = if span > 0.0 { (t - r0) / span } else { 0.0 };
            interpolate(writing.timestamps(), writing.points(), t0 + u * (t1 - t0))
        })
        .collect();
    Ok(WaypointSeq::new(target.to_vec(), points)?)
}

fn fit_style(data: &StyleDataset<f64>, cfg: &ExperimentConfig, seed: u64) -> Result<GmmModel<f64>, SessionError> {
    let z = cfg.z.min(data.len() / 4).max(1);
    let opts = EmOptions {
        max_iterations: cfg.style.max_iterations,
        relative_tolerance: cfg.style.relative_tolerance,
        cov_floor: cfg.style.cov_floor,
        ..EmOptions::default()
    };
    Ok(fit_gmm_with(data, z, seed, &opts)?.model)
}

fn mean_teaching_dtw(teaching: &[WaypointSeq<f64>], reference: &[WaypointSeq<f64>]) -> Result<f64, DtwError> {
    let mut total = 0.0;
    for (t, r) in teaching.iter().zip(reference) {
        total += dtw_align(t.points(), r.points())?.normalized();
    }
    Ok(total / teaching.len().max(1) as f64)
}

/// The plan for the session's next iteration. Depends only on the state and
/// the config.
pub fn plan_iteration(state: &SessionState, cfg: &ExperimentConfig) -> Result<TeachingPlan, SessionError> {
    state.expect(Phase::Teaching)?;
    if state.iteration >= cfg.m {
        return Err(SessionError::IterationOverflow(cfg.m));
    }
    let m = state.iteration;
    let zero_bands = || state.reference.iter().map(|r| vec![Point::zeros(); r.len()]).collect();
    match state.method {
        Method::Rgw => Ok(TeachingPlan {
            iteration: m,
            teaching: state.reference.clone(),
            bands: zero_bands(),
            via_points: Vec::new(),
            impedance: compose(cfg.impedance.k_max, Point::zeros(), &cfg.impedance).with_iteration(m),
            free_writing: false,
        }),
        Method::Fc => Ok(TeachingPlan {
            iteration: m,
            teaching: state.reference.clone(),
            bands: zero_bands(),
            via_points: Vec::new(),
            impedance: ImpedanceState::disengaged().with_iteration(m),
            free_writing: true,
        }),
        Method::TeachingBot => {
            let opts = ViaPointOptions {
                mode: cfg.style.curvature,
                radius: None,
            };
            let via = extract_character_via_points(&state.reference, cfg.h.at(m), &opts)?;
            let gen = GenerateOptions {
                length_scales: None,
                learner_noise: Mat2::identity() * cfg.style.learner_noise,
                via_noise: cfg.style.via_noise,
                cov_floor: cfg.style.cov_floor,
                sample: cfg.style.sample_teaching,
            };
            let mut teaching = Vec::with_capacity(state.stroke_count());
            let mut bands = Vec::with_capacity(state.stroke_count());
            for (j, reference) in state.reference.iter().enumerate() {
                let data = StyleDataset::from_writings(state.d_l[j].iter());
                let stroke_tag = (j as u64).to_le_bytes();
                let iter_tag = (m as u64).to_le_bytes();
                let model = fit_style(&data, cfg, derive_seed(state.seed, &[b"fit", &stroke_tag, &iter_tag]))?;
                let mut stroke_gen = gen.clone();
                if let Some(l) = cfg.style.length_scale {
                    stroke_gen.length_scales = Some(vec![l; model.components()]);
                }
                let sample_seed = derive_seed(state.seed, &[b"sample", &stroke_tag, &iter_tag]);
                let (waypoints, posterior) = generate_training_waypoints(
                    &model,
                    &via[j],
                    &data,
                    reference.timestamps(),
                    sample_seed,
                    &stroke_gen,
                )?;
                bands.push(
                    posterior
                        .covariances
                        .iter()
                        .map(|c| Point::new(c[(0, 0)].max(0.0).sqrt(), c[(1, 1)].max(0.0).sqrt()))
                        .collect(),
                );
                teaching.push(waypoints);
            }
            Ok(TeachingPlan {
                iteration: m,
                teaching,
                bands,
                via_points: via,
                impedance: state.impedance.with_iteration(m),
                free_writing: false,
            })
        }
    }
}

/// Ingests the writing produced under `plan`: updates the learner window,
/// the engagement stiffness and the history, and advances the iteration.
///
/// `forces` holds the learner's force samples per stroke when measured.
pub fn record_iteration(
    state: &mut SessionState,
    plan: TeachingPlan,
    actual: Vec<WaypointSeq<f64>>,
    forces: Option<Vec<Vec<Point<f64>>>>,
    records: Vec<InteractionRecord>,
    cfg: &ExperimentConfig,
) -> Result<(), SessionError> {
    state.expect(Phase::Teaching)?;
    if plan.iteration != state.iteration {
        return Err(SessionError::StalePlan {
            plan: plan.iteration,
            session: state.iteration,
        });
    }
    let actual = state.conform(&actual)?;
    for (j, s) in actual.iter().enumerate() {
        let window = &mut state.d_l[j];
        window.push(s.clone());
        if window.len() > cfg.l {
            window.remove(0);
        }
    }
    let profiles = actual
        .iter()
        .zip(&plan.teaching)
        .map(|(a, t)| deviation_profile(a.points(), t.points()))
        .collect::<Result<Vec<_>, _>>()?;
    let error = DeviationProfile::concat(&profiles);
    if state.method == Method::TeachingBot {
        let k_s = update_engagement(state.impedance.k_s, &error, &cfg.impedance);
        state.impedance = compose(state.impedance.k_r, k_s, &cfg.impedance);
    }
    state.last_error = Some(error);

    let mean_learner_force = forces.map(|f| {
        let (sum, count) = f
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, c), v| (s + v.norm(), c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    });
    let teaching_dtw = mean_teaching_dtw(&plan.teaching, &state.reference)?;
    state.d_v = plan.via_points;
    state.history.push(IterationSummary {
        iteration: plan.iteration,
        h: cfg.h.at(plan.iteration),
        impedance: plan.impedance,
        teaching_dtw,
        mean_learner_force,
        teaching: plan.teaching,
        actual,
        records,
    });
    state.iteration += 1;
    Ok(())
}

const PRETEST_TRIAL: u64 = 0;
const TEACHING_TRIAL: u64 = 1_000;
const EVALUATION_TRIAL: u64 = 2_000;

/// `L` unguided writings by the simulated learner, then style encoding and
/// stiffness initialization.
pub fn run_pretest(
    learner: &LearnerModel,
    character: &CharacterSpec<f64>,
    method: Method,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<SessionState, SessionError> {
    let mut state = SessionState::new(character, method, cfg, seed)?;
    for l in 0..cfg.l {
        let writing = simulate_unguided(learner, &character.id, PRETEST_TRIAL + l as u64)?;
        state.submit_pretest(writing, cfg)?;
    }
    Ok(state)
}

/// One simulated teaching iteration.
pub fn run_teaching_iteration(
    mut state: SessionState,
    learner: LearnerModel,
    cfg: &ExperimentConfig,
) -> Result<(SessionState, LearnerModel), SessionError> {
    let plan = plan_iteration(&state, cfg)?;
    let id = state.character.id.clone();
    let trial = TEACHING_TRIAL + plan.iteration as u64;
    let mut learner = learner;
    if plan.free_writing {
        if plan.iteration == 0 {
            learner.shift_toward(&id, &state.reference, cfg.fc_shift_gain)?;
        }
        let writing = simulate_unguided(&learner, &id, trial)?;
        let forces = None;
        record_iteration(&mut state, plan, writing, forces, Vec::new(), cfg)?;
        return Ok((state, learner));
    }

    let engagement = learner.engagement(plan.impedance.k_d, &cfg.sim);
    let mut actual = Vec::with_capacity(plan.teaching.len());
    let mut forces = Vec::with_capacity(plan.teaching.len());
    let mut records = Vec::new();
    for (j, teaching) in plan.teaching.iter().enumerate() {
        let record = simulate_guided(&learner, &id, j, teaching, &plan.impedance, &cfg.sim, trial)?;
        let written = record.resample_actual(teaching.timestamps())?;
        let weights = assimilation_weights(&learner, &id, j, &written, engagement)?;
        learner = learner_adapt_weighted(&learner, &id, j, &written, &weights)?;
        forces.push(record.learner_force.clone());
        actual.push(written);
        if cfg.keep_records {
            records.push(record);
        }
    }
    record_iteration(&mut state, plan, actual, Some(forces), records, cfg)?;
    Ok((state, learner))
}

/// `L` unguided writings after teaching, then final style encoding.
pub fn run_evaluation(
    mut state: SessionState,
    learner: &LearnerModel,
    cfg: &ExperimentConfig,
) -> Result<SessionState, SessionError> {
    if state.phase == Phase::Teaching {
        state.begin_evaluation()?;
    }
    for l in 0..cfg.l {
        let writing = simulate_unguided(learner, &state.character.id, EVALUATION_TRIAL + l as u64)?;
        state.submit_evaluation(writing, cfg)?;
    }
    Ok(state)
}

/// Pre-test, `M` iterations and evaluation.
pub fn run_session(
    learner: LearnerModel,
    character: &CharacterSpec<f64>,
    method: Method,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(SessionState, LearnerModel), SessionError> {
    let mut state = run_pretest(&learner, character, method, cfg, seed)?;
    let mut learner = learner;
    for _ in 0..cfg.m {
        (state, learner) = run_teaching_iteration(state, learner, cfg)?;
    }
    let state = run_evaluation(state, &learner, cfg)?;
    Ok((state, learner))
}
