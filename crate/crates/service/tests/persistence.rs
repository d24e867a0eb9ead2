mod common;

use common::{reference, sample_stroke, squash, writing, Server};
use penmentor::session::Phase;
use penmentor_service::wire::Sample;
use serde_json::json;

async fn drive(server: &Server, guided: usize) -> String {
    let env = server.create("tian", "TEACHINGBOT", json!({"m": 3})).await;
    let id = env["session_id"].as_str().unwrap().to_string();
    let refs = reference(&env);
    for k in [1.2, 1.25, 1.18] {
        let (status, _) = server.post(&format!("/sessions/{id}/writings"), &writing(&refs, 60.0, squash(k))).await;
        assert_eq!(status, 200);
    }
    for m in 0..guided {
        let (_, plan) = server.get(&format!("/sessions/{id}/teaching-step")).await;
        let guide: Vec<penmentor::trajectory::WaypointSeq<f64>> =
            serde_json::from_value(plan["payload"]["teaching"].clone()).unwrap();
        let strokes: Vec<Vec<Sample>> = guide
            .iter()
            .map(|s| sample_stroke(s, 60.0, s.duration(), |x, y| (x + 0.004, y)))
            .collect();
        let (status, body) = server
            .post(&format!("/sessions/{id}/guided-writings?iteration={m}"), &json!({"strokes": strokes}))
            .await;
        assert_eq!(status, 200, "{body}");
    }
    id
}

#[tokio::test]
async fn replaying_the_log_restores_every_session() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let server = Server::start(Some(&log)).await;
    let a = drive(&server, 2).await;
    let b = drive(&server, 0).await;
    let before_a = server.service.snapshot(&a).await.unwrap();
    let before_b = server.service.snapshot(&b).await.unwrap();
    let (_, plan_before) = server.get(&format!("/sessions/{a}/teaching-step")).await;
    server.shutdown().await;

    let reopened = Server::start(Some(&log)).await;
    let mut ids = reopened.service.session_ids();
    ids.sort();
    let mut expected = vec![a.clone(), b.clone()];
    expected.sort();
    assert_eq!(ids, expected);
    assert_eq!(reopened.service.snapshot(&a).await.unwrap(), before_a);
    assert_eq!(reopened.service.snapshot(&b).await.unwrap(), before_b);
    assert_eq!(before_a.iteration, 2);
    assert_eq!(before_b.phase, Phase::Teaching);
    let (_, plan_after) = reopened.get(&format!("/sessions/{a}/teaching-step")).await;
    assert_eq!(plan_after, plan_before);
}

#[tokio::test]
async fn each_accepted_request_is_on_disk_before_the_reply() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let server = Server::start(Some(&log)).await;
    let id = drive(&server, 1).await;
    let lines = std::fs::read_to_string(&log).unwrap();
    assert_eq!(lines.lines().count(), 5);
    for (i, line) in lines.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["schema"], "penmentor-events/1");
        assert_eq!(v["seq"], i);
        assert_eq!(v["session_id"], id.as_str());
    }

    let (status, _) = server.post(&format!("/sessions/{id}/writings"), &json!({"strokes": []})).await;
    assert_eq!(status, 409);
    let after = std::fs::read_to_string(&log).unwrap();
    assert_eq!(after.lines().count(), 5, "rejected requests are not logged");
    server.shutdown().await;
}

#[tokio::test]
async fn a_corrupt_log_is_refused_with_its_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    std::fs::write(&log, "{\"schema\":\"penmentor-events/1\",\"seq\":0,\"event\":\"created\"\n").unwrap();
    let err = penmentor_service::Service::open(
        penmentor::config::ExperimentConfig::default(),
        penmentor::corpus::builtin_character_set(),
        &log,
    )
    .err()
    .unwrap();
    assert!(err.to_string().contains("line 1"), "{err}");
}
