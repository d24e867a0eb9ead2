//! Session service for live teaching over HTTP and WebSocket.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/health` | readiness |
//! | POST | `/sessions` | create a session |
//! | GET | `/sessions/{id}` | session envelope |
//! | POST | `/sessions/{id}/writings` | pre-test or evaluation writing |
//! | GET | `/sessions/{id}/teaching-step` | current teaching plan |
//! | POST | `/sessions/{id}/guided-writings?iteration=m` | a whole guided writing at once |
//! | GET | `/sessions/{id}/guidance` | WebSocket: live correction stream |
//! | GET | `/sessions/{id}/report` | scores after evaluation |

pub mod live;
pub mod store;
pub mod wire;

use std::collections::HashMap;
use std::future::Future;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use penmentor::config::ExperimentConfig;
use penmentor::corpus::CharacterSet;
use penmentor::scalar::Point;
use penmentor::seed::derive_seed;
use penmentor::session::{Method, Phase, SessionState, TeachingPlan};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Mutex as AsyncMutex;

pub use live::{LiveSession, ServiceError};
use store::{Event, EventLog, StoreError};
use wire::{ClientMessage, CreateRequest, Envelope, ErrorBody, ErrorDetail, Sample, ServerMessage, SessionInfo, WritingRequest, SCHEMA};

type Handle = Arc<AsyncMutex<LiveSession>>;

pub struct Service {
    cfg: ExperimentConfig,
    characters: CharacterSet<f64>,
    sessions: Mutex<HashMap<String, Handle>>,
    log: Option<EventLog>,
}

impl Service {
    /// An in-memory service.
    pub fn new(cfg: ExperimentConfig, characters: CharacterSet<f64>) -> Self {
        Self {
            cfg,
            characters,
            sessions: Mutex::new(HashMap::new()),
            log: None,
        }
    }

    /// A service persisted to `log`, with every session already in it
    /// rebuilt by replay.
    pub fn open(cfg: ExperimentConfig, characters: CharacterSet<f64>, log: impl AsRef<Path>) -> Result<Self, StoreError> {
        let (log, events) = EventLog::open(log)?;
        let mut service = Self::new(cfg, characters);
        let mut sessions: HashMap<String, LiveSession> = HashMap::new();
        for (i, event) in events.iter().enumerate() {
            let corrupt = |message: String| StoreError::Corrupt {
                path: log.path().to_path_buf(),
                line: i + 1,
                message,
            };
            match event {
                Event::Created {
                    session_id,
                    character_id,
                    method,
                    seed,
                    overrides,
                } => {
                    let s = service
                        .build_session(session_id.clone(), character_id, *method, *seed, overrides.as_ref())
                        .map_err(|e| corrupt(e.to_string()))?;
                    sessions.insert(session_id.clone(), s);
                }
                other => {
                    let s = sessions
                        .get_mut(other.session_id())
                        .ok_or_else(|| corrupt(format!("unknown session {}", other.session_id())))?;
                    apply(s, other).map_err(|e| corrupt(e.to_string()))?;
                }
            }
        }
        service.sessions = Mutex::new(
            sessions
                .into_iter()
                .map(|(id, s)| (id, Arc::new(AsyncMutex::new(s))))
                .collect(),
        );
        service.log = Some(log);
        Ok(service)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    fn build_session(
        &self,
        id: String,
        character_id: &str,
        method: Method,
        seed: u64,
        overrides: Option<&serde_json::Value>,
    ) -> Result<LiveSession, ServiceError> {
        let character = self
            .characters
            .get(character_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown character {character_id:?}")))?;
        let cfg = match overrides {
            Some(o) => merge_config(&self.cfg, o)?,
            None => self.cfg.clone(),
        };
        LiveSession::new(id, character, method, seed, cfg)
    }

    pub fn create(&self, req: CreateRequest) -> Result<Envelope<SessionInfo>, ServiceError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let method = req.method.unwrap_or(Method::TeachingBot);
        let seed = req.seed.unwrap_or_else(|| derive_seed(0, &[b"session", id.as_bytes()]));
        let session = self.build_session(id.clone(), &req.character_id, method, seed, req.overrides.as_ref())?;
        self.persist(&Event::Created {
            session_id: id.clone(),
            character_id: req.character_id,
            method,
            seed,
            overrides: req.overrides,
        })?;
        let env = envelope(&session, info(&session));
        self.sessions
            .lock()
            .expect("session table lock")
            .insert(id, Arc::new(AsyncMutex::new(session)));
        Ok(env)
    }

    fn handle(&self, id: &str) -> Result<Handle, ServiceError> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown session {id:?}")))
    }

    fn persist(&self, event: &Event) -> Result<(), ServiceError> {
        if let Some(log) = &self.log {
            log.append(event).map_err(|e| {
                tracing::error!("{e}");
                ServiceError::Internal(e.to_string())
            })?;
        }
        Ok(())
    }

    /// Runs `f` on the session on a blocking thread. Calls on one session
    /// are serialized.
    pub async fn with_session<R, F>(self: &Arc<Self>, id: &str, f: F) -> Result<R, ServiceError>
    where
        R: Send + 'static,
        F: FnOnce(&Service, &mut LiveSession) -> Result<R, ServiceError> + Send + 'static,
    {
        let handle = self.handle(id)?;
        let mut guard = handle.lock_owned().await;
        let service = Arc::clone(self);
        tokio::task::spawn_blocking(move || f(&service, &mut guard))
            .await
            .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
    }

    /// Applies a writing event and logs it once it succeeds.
    fn apply_and_log<R>(&self, session: &mut LiveSession, event: Event, f: impl FnOnce(&mut LiveSession) -> Result<R, ServiceError>) -> Result<R, ServiceError> {
        let out = f(session)?;
        self.persist(&event)?;
        Ok(out)
    }

    pub async fn snapshot(self: &Arc<Self>, id: &str) -> Result<SessionState, ServiceError> {
        let handle = self.handle(id)?;
        let guard = handle.lock().await;
        Ok(guard.state.clone())
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().expect("session table lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Flushes the event log to disk.
    pub fn sync(&self) -> Result<(), StoreError> {
        match &self.log {
            Some(log) => log.sync(),
            None => Ok(()),
        }
    }
}

fn apply(s: &mut LiveSession, event: &Event) -> Result<(), ServiceError> {
    match event {
        Event::Created { .. } => Err(ServiceError::Internal("session created twice".into())),
        Event::Writing { strokes, .. } => s.submit_writing(strokes).map(|_| ()),
        Event::Guided { iteration, strokes, .. } => s.complete_guided(*iteration, strokes).map(|_| ()),
    }
}

fn merge_config(base: &ExperimentConfig, overrides: &serde_json::Value) -> Result<ExperimentConfig, ServiceError> {
    fn merge(into: &mut serde_json::Value, from: &serde_json::Value) {
        match (into, from) {
            (serde_json::Value::Object(a), serde_json::Value::Object(b)) => {
                for (k, v) in b {
                    merge(a.entry(k.clone()).or_insert(serde_json::Value::Null), v);
                }
            }
            (slot, v) => *slot = v.clone(),
        }
    }
    let mut value = serde_json::to_value(base).map_err(|e| ServiceError::Internal(e.to_string()))?;
    merge(&mut value, overrides);
    let cfg: ExperimentConfig =
        serde_path_to_error::deserialize(value).map_err(|e| ServiceError::Validation(format!("overrides: {e}")))?;
    cfg.validate().map_err(|e| ServiceError::Validation(e.to_string()))?;
    Ok(cfg)
}

fn info(s: &LiveSession) -> SessionInfo {
    SessionInfo {
        method: s.state.method,
        seed: s.state.seed,
        stroke_count: s.state.stroke_count(),
        reference: s.state.reference.clone(),
    }
}

fn envelope<P>(s: &LiveSession, payload: P) -> Envelope<P> {
    Envelope {
        schema: SCHEMA.into(),
        session_id: s.id.clone(),
        phase: s.state.phase,
        character_id: s.state.character.id.clone(),
        iteration: s.state.iteration,
        payload,
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Protocol(_) => StatusCode::CONFLICT,
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            schema: SCHEMA.into(),
            error: ErrorDetail {
                code: self.code().into(),
                message: self.to_string(),
            },
        };
        (status, Json(body)).into_response()
    }
}

/// Parses a JSON body, naming the offending field or index on failure.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        ServiceError::Validation(format!("{path}: {}", e.inner()))
    })
}

type Shared = State<Arc<Service>>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/writings", post(writing))
        .route("/sessions/{id}/teaching-step", get(teaching_step))
        .route("/sessions/{id}/guided-writings", post(guided_writing))
        .route("/sessions/{id}/guidance", get(guidance))
        .route("/sessions/{id}/report", get(report))
        .with_state(service)
}

#[derive(Serialize)]
struct Health {
    schema: &'static str,
    status: &'static str,
    sessions: usize,
}

async fn health(State(svc): Shared) -> Json<Health> {
    Json(Health {
        schema: SCHEMA,
        status: "ready",
        sessions: svc.sessions.lock().expect("session table lock").len(),
    })
}

async fn create(State(svc): Shared, body: Bytes) -> Result<(StatusCode, Json<Envelope<SessionInfo>>), ServiceError> {
    let req: CreateRequest = parse(&body)?;
    let svc2 = Arc::clone(&svc);
    let env = tokio::task::spawn_blocking(move || svc2.create(req))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(env)))
}

async fn show(State(svc): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<Envelope<SessionInfo>>, ServiceError> {
    svc.with_session(&id, |_, s| Ok(Json(envelope(s, info(s))))).await
}

async fn writing(
    State(svc): Shared,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Envelope<wire::WritingAck>>, ServiceError> {
    let req: WritingRequest = parse(&body)?;
    svc.with_session(&id, move |svc, s| {
        let event = Event::Writing {
            session_id: s.id.clone(),
            strokes: req.strokes.clone(),
        };
        let ack = svc.apply_and_log(s, event, |s| s.submit_writing(&req.strokes))?;
        Ok(Json(envelope(s, ack)))
    })
    .await
}

async fn teaching_step(
    State(svc): Shared,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Envelope<TeachingPlan>>, ServiceError> {
    svc.with_session(&id, |_, s| {
        let plan = s.teaching_step()?;
        Ok(Json(envelope(s, plan)))
    })
    .await
}

#[derive(Deserialize)]
struct IterationQuery {
    iteration: usize,
}

async fn guided_writing(
    State(svc): Shared,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<IterationQuery>,
    body: Bytes,
) -> Result<Json<Envelope<wire::IterationAck>>, ServiceError> {
    let req: WritingRequest = parse(&body)?;
    svc.with_session(&id, move |svc, s| commit_guided(svc, s, q.iteration, req.strokes).map(|ack| Json(envelope(s, ack))))
        .await
}

fn commit_guided(
    svc: &Service,
    s: &mut LiveSession,
    iteration: usize,
    strokes: Vec<Vec<Sample>>,
) -> Result<wire::IterationAck, ServiceError> {
    let event = Event::Guided {
        session_id: s.id.clone(),
        iteration,
        strokes: strokes.clone(),
    };
    svc.apply_and_log(s, event, |s| s.complete_guided(iteration, &strokes))
}

async fn report(State(svc): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<Envelope<wire::SessionReport>>, ServiceError> {
    svc.with_session(&id, |_, s| {
        let r = s.report()?;
        Ok(Json(envelope(s, r)))
    })
    .await
}

async fn guidance(State(svc): Shared, UrlPath(id): UrlPath<String>, ws: WebSocketUpgrade) -> Result<Response, ServiceError> {
    svc.handle(&id)?;
    Ok(ws.on_upgrade(move |socket| stream_guidance(svc, id, socket)))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("server messages serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

fn error_message(e: &ServiceError) -> ServerMessage {
    ServerMessage::Error {
        code: e.code().into(),
        message: e.to_string(),
    }
}

/// Streams corrections for one guided writing after another until the
/// teaching phase ends or the client leaves. A writing is committed only
/// once all its strokes have ended; partial writings are discarded.
async fn stream_guidance(svc: Arc<Service>, id: String, mut socket: WebSocket) {
    'writing: loop {
        let plan = match svc.with_session(&id, |_, s| s.teaching_step()).await {
            Ok(p) => p,
            Err(e) => {
                send(&mut socket, &error_message(&e)).await;
                return;
            }
        };
        let ready = ServerMessage::Ready {
            iteration: plan.iteration,
            stroke_count: plan.teaching.len(),
            impedance: plan.impedance,
        };
        if !send(&mut socket, &ready).await {
            return;
        }
        let mut strokes: Vec<Vec<Sample>> = Vec::new();
        let mut current: Vec<Sample> = Vec::new();
        let mut magnitudes: Vec<f64> = Vec::new();
        let mut seq = 0u64;
        while let Some(Ok(msg)) = socket.recv().await {
            let text = match msg {
                Message::Text(t) => t,
                Message::Close(_) => return,
                _ => continue,
            };
            let parsed: Result<ClientMessage, _> = serde_json::from_str(&text);
            let reply = match parsed {
                Err(e) => error_message(&ServiceError::Validation(e.to_string())),
                Ok(ClientMessage::Sample { t, x, y }) => {
                    seq += 1;
                    let stroke = strokes.len();
                    if stroke >= plan.teaching.len() {
                        error_message(&ServiceError::Protocol("all strokes of this writing have ended".into()))
                    } else if !(t.is_finite() && x.is_finite() && y.is_finite()) {
                        ServerMessage::Dropped {
                            seq,
                            reason: "not_finite".into(),
                        }
                    } else if current.last().is_some_and(|p| t < p.t) {
                        ServerMessage::Dropped {
                            seq,
                            reason: "out_of_order".into(),
                        }
                    } else {
                        let t0 = current.first().map_or(t, |p| p.t);
                        current.push(Sample { t, x, y });
                        let (desired, correction, progress) = live::guidance_at(&plan, stroke, t - t0, Point::new(x, y));
                        magnitudes.push(correction.norm());
                        ServerMessage::Guidance {
                            stroke,
                            seq,
                            desired,
                            correction,
                            progress,
                        }
                    }
                }
                Ok(ClientMessage::StrokeEnd) => {
                    let stroke = strokes.len();
                    match live::stroke_from_samples(stroke, &current) {
                        Err(e) => {
                            current.clear();
                            magnitudes.clear();
                            error_message(&e)
                        }
                        Ok(_) => {
                            let mean = magnitudes.iter().sum::<f64>() / magnitudes.len() as f64;
                            let samples = current.len();
                            strokes.push(std::mem::take(&mut current));
                            magnitudes.clear();
                            if strokes.len() == plan.teaching.len() {
                                let recorded = ServerMessage::StrokeRecorded {
                                    stroke,
                                    samples,
                                    mean_correction: mean,
                                };
                                if !send(&mut socket, &recorded).await {
                                    return;
                                }
                                let iteration = plan.iteration;
                                let all = std::mem::take(&mut strokes);
                                let done = svc
                                    .with_session(&id, move |svc, s| {
                                        commit_guided(svc, s, iteration, all).map(|ack| (ack, s.phase()))
                                    })
                                    .await;
                                match done {
                                    Ok((ack, phase)) => {
                                        let msg = ServerMessage::IterationComplete {
                                            iteration: ack.completed,
                                            phase,
                                            impedance: ack.impedance,
                                        };
                                        if !send(&mut socket, &msg).await || phase != Phase::Teaching {
                                            return;
                                        }
                                        continue 'writing;
                                    }
                                    Err(e) => {
                                        send(&mut socket, &error_message(&e)).await;
                                        return;
                                    }
                                }
                            }
                            ServerMessage::StrokeRecorded {
                                stroke,
                                samples,
                                mean_correction: mean,
                            }
                        }
                    }
                }
            };
            if !send(&mut socket, &reply).await {
                return;
            }
        }
        return;
    }
}

/// Serves until `shutdown` resolves, then flushes the event log.
pub async fn serve(
    listener: TcpListener,
    service: Arc<Service>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::clone(&service)))
        .with_graceful_shutdown(shutdown)
        .await?;
    service.sync().map_err(std::io::Error::other)?;
    Ok(())
}
