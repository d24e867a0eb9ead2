//! JSON payloads. Meters and seconds throughout.

use penmentor::impedance::ImpedanceState;
use penmentor::report::PhaseScore;
use penmentor::scalar::Point;
use penmentor::session::{Method, Phase};
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "penmentor-session/1";

/// One pen sample; `t` in seconds on the client's clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub character_id: String,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Partial experiment configuration merged over the server's.
    #[serde(default)]
    pub overrides: Option<serde_json::Value>,
}

/// A complete writing, one sample list per stroke.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WritingRequest {
    pub strokes: Vec<Vec<Sample>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<P> {
    pub schema: String,
    pub session_id: String,
    pub phase: Phase,
    pub character_id: String,
    pub iteration: usize,
    pub payload: P,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub method: Method,
    pub seed: u64,
    pub stroke_count: usize,
    pub reference: Vec<penmentor::trajectory::WaypointSeq<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WritingAck {
    pub accepted_in: Phase,
    /// Writings received so far in that phase.
    pub writings: usize,
    /// Set by the pre-test writing that opens the teaching phase.
    pub impedance: Option<ImpedanceState<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationAck {
    pub completed: usize,
    pub mean_correction: f64,
    pub impedance: ImpedanceState<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub k_d: Point<f64>,
    pub b_d: Point<f64>,
    /// Mean spring-term magnitude over the streamed samples, N.
    pub mean_correction: Option<f64>,
    pub teaching_dtw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionReport {
    pub pretest: Vec<PhaseScore>,
    pub evaluation: Vec<PhaseScore>,
    pub improvement_m1: Option<f64>,
    pub improvement_m2: Option<f64>,
    pub iterations: Vec<IterationReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema: String,
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

/// Client → server on the guidance channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Sample { t: f64, x: f64, y: f64 },
    StrokeEnd,
}

/// Server → client on the guidance channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ready {
        iteration: usize,
        stroke_count: usize,
        impedance: ImpedanceState<f64>,
    },
    Guidance {
        stroke: usize,
        seq: u64,
        desired: Point<f64>,
        /// `−K_d∘(x − x_d)`, N.
        correction: Point<f64>,
        /// Fraction of the stroke's teaching trajectory reached.
        progress: f64,
    },
    Dropped {
        seq: u64,
        reason: String,
    },
    StrokeRecorded {
        stroke: usize,
        samples: usize,
        mean_correction: f64,
    },
    IterationComplete {
        iteration: usize,
        phase: Phase,
        impedance: ImpedanceState<f64>,
    },
    Error {
        code: String,
        message: String,
    },
}
