#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use penmentor::config::ExperimentConfig;
use penmentor::corpus::builtin_character_set;
use penmentor::trajectory::{interpolate, WaypointSeq};
use penmentor_service::wire::Sample;
use penmentor_service::{serve, Service};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub struct Server {
    pub base: String,
    pub service: Arc<Service>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<std::io::Result<()>>>,
}

impl Server {
    pub async fn start(log: Option<&Path>) -> Self {
        let cfg = ExperimentConfig::default();
        let chars = builtin_character_set();
        let service = Arc::new(match log {
            Some(p) => Service::open(cfg, chars, p).unwrap(),
            None => Service::new(cfg, chars),
        });
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve(listener, Arc::clone(&service), async {
            rx.await.ok();
        }));
        Self {
            base,
            service,
            stop: Some(tx),
            task: Some(task),
        }
    }

    pub fn ws_url(&self, id: &str) -> String {
        format!("{}/sessions/{id}/guidance", self.base.replace("http://", "ws://"))
    }

    pub async fn shutdown(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.task.take().unwrap().await.unwrap().unwrap();
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = reqwest::get(format!("{}{path}", self.base)).await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    pub async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let r = reqwest::Client::new()
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    pub async fn create(&self, character: &str, method: &str, overrides: Value) -> Value {
        let (status, env) = self
            .post(
                "/sessions",
                &json!({"character_id": character, "method": method, "seed": 11, "overrides": overrides}),
            )
            .await;
        assert_eq!(status, 201, "{env}");
        env
    }
}

pub fn reference(env: &Value) -> Vec<WaypointSeq<f64>> {
    serde_json::from_value(env["payload"]["reference"].clone()).unwrap()
}

/// A stroke sampled at `hz` over `duration` seconds, each point mapped by `f`.
pub fn sample_stroke(stroke: &WaypointSeq<f64>, hz: f64, duration: f64, f: impl Fn(f64, f64) -> (f64, f64)) -> Vec<Sample> {
    let span = stroke.duration();
    let t0 = stroke.timestamps()[0];
    let count = (duration * hz).floor() as usize;
    (0..=count)
        .map(|k| {
            let t = (k as f64 / hz).min(duration);
            let p = interpolate(stroke.timestamps(), stroke.points(), t0 + span * t / duration);
            let (x, y) = f(p.x, p.y);
            Sample { t: 5.0 + t, x, y }
        })
        .collect()
}

/// A writing of the whole character.
pub fn writing(reference: &[WaypointSeq<f64>], hz: f64, f: impl Fn(f64, f64) -> (f64, f64) + Copy) -> Value {
    let strokes: Vec<Vec<Sample>> = reference.iter().map(|s| sample_stroke(s, hz, 1.5, f)).collect();
    json!({ "strokes": strokes })
}

/// Scales the character about a point so writings differ from the
/// reference in shape.
pub fn squash(k: f64) -> impl Fn(f64, f64) -> (f64, f64) + Copy {
    move |x, y| (0.17 + (x - 0.17) * k, 0.17 + (y - 0.17) * (2.0 - k))
}
