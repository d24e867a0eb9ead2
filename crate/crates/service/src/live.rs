//! One live session: the teaching state machine driven by client writings.

use penmentor::config::ExperimentConfig;
use penmentor::corpus::CharacterSpec;
use penmentor::metrics::improvement_percent;
use penmentor::report::{score_writing, PhaseScore};
use penmentor::scalar::Point;
use penmentor::session::{plan_iteration, record_iteration, Method, Phase, SessionError, SessionState, TeachingPlan};
use penmentor::trajectory::WaypointSeq;
use thiserror::Error;

use crate::wire::{IterationAck, IterationReport, Sample, SessionReport, WritingAck};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    /// Request not allowed in the session's current phase.
    #[error("{0}")]
    Protocol(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Protocol(_) => "protocol",
            ServiceError::Validation(_) => "validation",
            ServiceError::Internal(_) => "internal",
        }
    }
}

impl From<SessionError> for ServiceError {
    fn from(e: SessionError) -> Self {
        let msg = e.to_string();
        match e {
            SessionError::WrongPhase { .. } | SessionError::IterationOverflow(_) | SessionError::StalePlan { .. } => {
                ServiceError::Protocol(msg)
            }
            SessionError::StrokeCount { .. }
            | SessionError::ShortStroke { .. }
            | SessionError::Sequence(_)
            | SessionError::Gmm(_) => ServiceError::Validation(msg),
            _ => ServiceError::Internal(msg),
        }
    }
}

/// Client samples of one stroke as a waypoint sequence starting at `t = 0`.
/// Samples sharing a timestamp collapse to the last of them.
pub fn stroke_from_samples(stroke: usize, samples: &[Sample]) -> Result<WaypointSeq<f64>, ServiceError> {
    let bad = |m: String| Err(ServiceError::Validation(m));
    if samples.len() < 2 {
        return bad(format!("stroke {stroke} has {} samples; at least 2 are needed", samples.len()));
    }
    let mut ts: Vec<f64> = Vec::with_capacity(samples.len());
    let mut pts: Vec<Point<f64>> = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite()) {
            return bad(format!("stroke {stroke} sample {i} is not finite"));
        }
        let t = s.t - samples[0].t;
        match ts.last() {
            Some(&prev) if t < prev => return bad(format!("stroke {stroke} sample {i}: timestamp goes backwards")),
            Some(&prev) if t == prev => *pts.last_mut().expect("paired with ts") = Point::new(s.x, s.y),
            _ => {
                ts.push(t);
                pts.push(Point::new(s.x, s.y));
            }
        }
    }
    if ts.len() < 2 {
        return bad(format!("stroke {stroke} has zero duration"));
    }
    WaypointSeq::new(ts, pts).map_err(|e| ServiceError::Validation(format!("stroke {stroke}: {e}")))
}

/// Guide point nearest in time to `t` (seconds since stroke start), the
/// spring correction toward it, and the progress fraction.
pub fn guidance_at(plan: &TeachingPlan, stroke: usize, t: f64, pen: Point<f64>) -> (Point<f64>, Point<f64>, f64) {
    let guide = &plan.teaching[stroke];
    let ts = guide.timestamps();
    let target = ts[0] + t;
    let i = ts.partition_point(|&s| s < target);
    let idx = if i == 0 {
        0
    } else if i == ts.len() || target - ts[i - 1] <= ts[i] - target {
        i - 1
    } else {
        i
    };
    let desired = guide.points()[idx];
    let correction = -plan.impedance.k_d.component_mul(&(pen - desired));
    let progress = if ts.len() > 1 { idx as f64 / (ts.len() - 1) as f64 } else { 1.0 };
    (desired, correction, progress)
}

pub struct LiveSession {
    pub id: String,
    pub cfg: ExperimentConfig,
    pub state: SessionState,
    plan: Option<TeachingPlan>,
}

impl LiveSession {
    pub fn new(
        id: String,
        character: &CharacterSpec<f64>,
        method: Method,
        seed: u64,
        cfg: ExperimentConfig,
    ) -> Result<Self, ServiceError> {
        let state = SessionState::new(character, method, &cfg, seed)?;
        Ok(Self {
            id,
            cfg,
            state,
            plan: None,
        })
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    /// A pre-test or evaluation writing.
    pub fn submit_writing(&mut self, strokes: &[Vec<Sample>]) -> Result<WritingAck, ServiceError> {
        let writing = strokes
            .iter()
            .enumerate()
            .map(|(j, s)| stroke_from_samples(j, s))
            .collect::<Result<Vec<_>, _>>()?;
        let phase = self.state.phase;
        match phase {
            Phase::Pretest => {
                self.state.submit_pretest(writing, &self.cfg)?;
                let opened = self.state.phase == Phase::Teaching;
                Ok(WritingAck {
                    accepted_in: phase,
                    writings: self.state.pretest_writings(),
                    impedance: opened.then_some(self.state.impedance),
                })
            }
            Phase::Evaluation => {
                self.state.submit_evaluation(writing, &self.cfg)?;
                Ok(WritingAck {
                    accepted_in: phase,
                    writings: self.state.evaluation.len(),
                    impedance: None,
                })
            }
            other => Err(ServiceError::Protocol(format!(
                "writings are accepted in PRETEST and EVALUATION; session is in {}",
                phase_name(other)
            ))),
        }
    }

    /// The current iteration's plan; repeated calls return the same plan.
    pub fn teaching_step(&mut self) -> Result<TeachingPlan, ServiceError> {
        if let Some(p) = &self.plan {
            if p.iteration == self.state.iteration && self.state.phase == Phase::Teaching {
                return Ok(p.clone());
            }
        }
        let plan = plan_iteration(&self.state, &self.cfg)?;
        self.plan = Some(plan.clone());
        Ok(plan)
    }

    /// Records a full guided writing for `iteration`. Corrections are
    /// recomputed from the samples so replays match live sessions.
    pub fn complete_guided(&mut self, iteration: usize, strokes: &[Vec<Sample>]) -> Result<IterationAck, ServiceError> {
        let plan = self.teaching_step()?;
        if plan.iteration != iteration {
            return Err(ServiceError::Protocol(format!(
                "writing is for iteration {iteration}, session is at {}",
                plan.iteration
            )));
        }
        if strokes.len() != plan.teaching.len() {
            return Err(ServiceError::Validation(format!(
                "writing has {} strokes, character has {}",
                strokes.len(),
                plan.teaching.len()
            )));
        }
        let mut actual = Vec::with_capacity(strokes.len());
        let mut corrections = Vec::with_capacity(strokes.len());
        for (j, samples) in strokes.iter().enumerate() {
            let seq = stroke_from_samples(j, samples)?;
            corrections.push(
                seq.timestamps()
                    .iter()
                    .zip(seq.points())
                    .map(|(&t, &p)| guidance_at(&plan, j, t, p).1)
                    .collect::<Vec<_>>(),
            );
            actual.push(seq);
        }
        record_iteration(&mut self.state, plan, actual, Some(corrections), Vec::new(), &self.cfg)?;
        self.plan = None;
        if self.state.iteration == self.cfg.m {
            self.state.begin_evaluation()?;
        }
        let last = self.state.history.last().expect("iteration just recorded");
        Ok(IterationAck {
            completed: last.iteration,
            mean_correction: last.mean_learner_force.unwrap_or(0.0),
            impedance: self.state.impedance,
        })
    }

    pub fn report(&self) -> Result<SessionReport, ServiceError> {
        if self.state.phase != Phase::Complete {
            return Err(ServiceError::Protocol(format!(
                "report is available once evaluation is complete; session is in {}",
                phase_name(self.state.phase)
            )));
        }
        let score = |ws: &[Vec<WaypointSeq<f64>>]| -> Result<Vec<PhaseScore>, ServiceError> {
            ws.iter()
                .map(|w| {
                    score_writing(w, &self.state.reference)
                        .map(|(s, _)| s)
                        .map_err(|e| ServiceError::Internal(e.to_string()))
                })
                .collect()
        };
        let pretest = score(&self.state.pretest)?;
        let evaluation = score(&self.state.evaluation)?;
        let pick = |v: &[PhaseScore], f: fn(&PhaseScore) -> f64| v.iter().map(f).collect::<Vec<_>>();
        let improvement = |f: fn(&PhaseScore) -> f64| improvement_percent(&pick(&pretest, f), &pick(&evaluation, f));
        Ok(SessionReport {
            improvement_m1: improvement(|s| s.m1),
            improvement_m2: improvement(|s| s.m2),
            iterations: self
                .state
                .history
                .iter()
                .map(|h| IterationReport {
                    iteration: h.iteration,
                    k_d: h.impedance.k_d,
                    b_d: h.impedance.b_d,
                    mean_correction: h.mean_learner_force,
                    teaching_dtw: h.teaching_dtw,
                })
                .collect(),
            pretest,
            evaluation,
        })
    }
}

pub fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Pretest => "PRETEST",
        Phase::Teaching => "TEACHING",
        Phase::Evaluation => "EVALUATION",
        Phase::Complete => "COMPLETE",
    }
}
