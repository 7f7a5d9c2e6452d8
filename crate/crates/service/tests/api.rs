mod common;

use std::path::PathBuf;

use common::*;
use echo_service::ManualClock;
use serde_json::{json, Value};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares `actual` with a golden file; `ECHO_UPDATE_GOLDEN=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("ECHO_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{} differs from the golden file", path.display());
}

struct Script {
    router: axum::Router,
    clock: ManualClock,
    transcript: String,
}

impl Script {
    fn new() -> Self {
        let clock = ManualClock::new(START_MS);
        Script {
            router: router(memory_app(&clock)),
            clock,
            transcript: String::new(),
        }
    }

    async fn step(&mut self, advance_ms: u64, method: &str, uri: &str, body: Option<Value>) -> (u16, Value) {
        self.clock.advance(advance_ms);
        let (status, reply) = call(&self.router, method, uri, body.as_ref()).await;
        let line = json!({"method": method, "uri": uri, "body": body, "status": status, "reply": reply});
        self.transcript.push_str(&line.to_string());
        self.transcript.push('\n');
        (status, reply)
    }
}

/// Runs the scripted session and returns the transcript and the event log.
async fn scripted_session() -> (String, String) {
    let mut s = Script::new();
    let (st, r) = s.step(0, "POST", "/session", Some(json!({"user_id": "alice"}))).await;
    assert_eq!(st, 200);
    let sid = r["session_id"].as_str().unwrap().to_string();
    assert_eq!(sid, "s000001");
    let base = format!("/session/{sid}");

    let (_, r) = s.step(1_000, "POST", &format!("{base}/message"), Some(json!({"text": "hi"}))).await;
    assert_eq!(r["taskable"], false);
    assert!(r.get("survey").is_none());

    let (_, r) = s.step(20_000, "POST", &format!("{base}/message"), Some(json!({"text": TASKABLE}))).await;
    assert_eq!(r["taskable"], true, "{r}");
    let tasks = r["survey"]["tasks"].as_array().unwrap().clone();
    assert_eq!(tasks.len(), 4);
    assert_eq!(r["survey"]["min_read_seconds"], 5.0);
    let shown = r["recommendations"].as_array().unwrap().len() as u64;
    let card = r["recommendation"].clone();
    assert!(card.is_object(), "{r}");
    let impression = card["impression_id"].as_str().unwrap().to_string();

    let t0 = tasks[0]["task_id"].as_str().unwrap();
    let (st, r) = s
        .step(3_000, "POST", &format!("{base}/response"), Some(json!({"task_id": t0, "answer": answer_for(&tasks[0], 1), "read_latency_s": 3.0})))
        .await;
    assert_eq!(st, 200);
    assert_eq!((r["status"].as_str(), r["reason"].as_str()), (Some("rejected"), Some("too_fast")));
    assert_eq!(r["min_read_seconds"], 5.0);

    for (i, t) in tasks.iter().enumerate() {
        let body = if i == 1 {
            json!({"task_id": t["task_id"], "abstain": true, "read_latency_s": 7.5})
        } else {
            json!({"task_id": t["task_id"], "answer": answer_for(t, i), "read_latency_s": 6.0 + i as f64})
        };
        let (st, r) = s.step(4_000, "POST", &format!("{base}/response"), Some(body)).await;
        assert_eq!((st, r["status"].as_str()), (200, Some("accepted")), "{r}");
        assert_eq!(r["trained"], i != 1);
    }
    let (_, r) = s
        .step(1_000, "POST", &format!("{base}/response"), Some(json!({"task_id": t0, "answer": answer_for(&tasks[0], 0), "read_latency_s": 9.0})))
        .await;
    assert_eq!(r["reason"], "duplicate");

    for n in 1..=3 {
        let (st, r) = s.step(500, "POST", &format!("{base}/click"), Some(json!({"impression_id": impression}))).await;
        assert_eq!((st, r["clicks"].as_u64()), (200, Some(n)));
    }

    // a repeated message is rejected as spam and shows nothing
    let (_, r) = s.step(2_000, "POST", &format!("{base}/message"), Some(json!({"text": TASKABLE}))).await;
    assert_eq!(r["taskable"], false);
    assert_eq!(r["turn_index"], 2);
    assert!(r["recommendations"].as_array().unwrap().is_empty());

    let (st, m) = s.step(1_000, "GET", "/metrics", None).await;
    assert_eq!(st, 200);
    let by_source = m["ctr"]["by_source"].as_array().unwrap();
    let total_imps: u64 = by_source.iter().map(|r| r["impressions"].as_u64().unwrap()).sum();
    let total_clicks: u64 = by_source.iter().map(|r| r["clicks"].as_u64().unwrap()).sum();
    assert_eq!(total_clicks, 3);
    assert_eq!(total_imps, shown, "{m}");
    assert_eq!(m["completion_rate"], 1.0);
    assert_eq!(m["sigma"].as_object().unwrap().len(), 16);

    let (_, page) = s.step(0, "GET", &format!("{base}/events"), None).await;
    let events = page["events"].as_array().unwrap();
    assert_eq!(events[0]["kind"], "message");
    let mid = events[events.len() / 2]["event_id"].as_u64().unwrap();
    let (_, rest) = s.step(0, "GET", &format!("{base}/events?after={mid}"), None).await;
    assert_eq!(rest["events"].as_array().unwrap().len(), events.len() - mid as usize);
    assert_eq!(rest["last_event_id"], page["last_event_id"]);

    let app = s.router;
    // the golden log is the log the engine holds, taken through a second request
    let (_, page) = call(&app, "GET", &format!("{base}/events"), None).await;
    let mut log = String::new();
    for e in page["events"].as_array().unwrap() {
        log.push_str(&e.to_string());
        log.push('\n');
    }
    (s.transcript, log)
}

#[tokio::test]
async fn scripted_session_matches_golden_files() {
    let (transcript, log) = scripted_session().await;
    check_golden("session_transcript.jsonl", &transcript);
    check_golden("session_events.jsonl", &log);
}

#[tokio::test]
async fn scripted_session_is_deterministic() {
    assert_eq!(scripted_session().await, scripted_session().await);
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let clock = ManualClock::new(START_MS);
    let r = router(memory_app(&clock));
    for (method, uri, body) in [
        ("POST", "/session/nope/message", json!({"text": "hello"})),
        ("POST", "/session/nope/response", json!({"task_id": "t", "answer": 0, "read_latency_s": 9})),
        ("POST", "/session/nope/click", json!({"impression_id": "i"})),
        ("GET", "/session/nope/events", Value::Null),
    ] {
        let (st, v) = call(&r, method, uri, Some(&body).filter(|b| !b.is_null())).await;
        assert_eq!(st, 404, "{uri}");
        assert_eq!(v["error"], "not_found");
    }
    let (_, v) = call(&r, "POST", "/session", None).await;
    let sid = v["session_id"].as_str().unwrap();
    let (st, v) = call(&r, "POST", &format!("/session/{sid}/click"), Some(&json!({"impression_id": "imp-9"}))).await;
    assert_eq!((st, v["message"].as_str()), (404, Some("unknown impression `imp-9`")));
    let body = json!({"task_id": "s000001-q1-t0", "answer": 0, "read_latency_s": 9});
    let (st, _) = call(&r, "POST", &format!("/session/{sid}/response"), Some(&body)).await;
    assert_eq!(st, 404);
    let (st, _) = call(&r, "GET", "/nowhere", None).await;
    assert_eq!(st, 404);
}

#[tokio::test]
async fn malformed_bodies_get_field_diagnostics() {
    let clock = ManualClock::new(START_MS);
    let r = router(memory_app(&clock));
    let (_, v) = call(&r, "POST", "/session", None).await;
    let base = format!("/session/{}", v["session_id"].as_str().unwrap());
    let (st, v) = call_raw(&r, "POST", &format!("{base}/message"), "{\"txt\": 1}".into()).await;
    assert_eq!(st, 400);
    assert_eq!(v["error"], "bad_request");
    let fields: Vec<&str> = v["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    assert_eq!(fields, ["txt", "text"]);
    let (st, v) = call_raw(&r, "POST", &format!("{base}/response"), "not json".into()).await;
    assert_eq!(st, 400);
    assert_eq!(v["fields"][0]["field"], "$");
    let (st, v) = call(&r, "POST", &format!("{base}/response"), Some(&json!({"task_id": 5, "answer": [1], "read_latency_s": -2}))).await;
    assert_eq!(st, 400);
    assert_eq!(v["fields"].as_array().unwrap().len(), 3);
    let (st, v) = call(&r, "GET", &format!("{base}/events?after=x"), None).await;
    assert_eq!((st, v["fields"][0]["field"].as_str()), (400, Some("after")));
    let (st, _) = call_raw(&r, "POST", "/session", "{\"user\": \"x\"}".into()).await;
    assert_eq!(st, 400);
}

#[tokio::test]
async fn get_endpoints_do_not_mutate() {
    let clock = ManualClock::new(START_MS);
    let r = router(memory_app(&clock));
    let (_, v) = call(&r, "POST", "/session", None).await;
    let base = format!("/session/{}", v["session_id"].as_str().unwrap());
    call(&r, "POST", &format!("{base}/message"), Some(&json!({"text": TASKABLE}))).await;
    let first = (call(&r, "GET", "/metrics", None).await, call(&r, "GET", &format!("{base}/events"), None).await);
    clock.advance(3_600_000);
    let second = (call(&r, "GET", "/metrics", None).await, call(&r, "GET", &format!("{base}/events"), None).await);
    assert_eq!(first, second);
}

#[tokio::test]
async fn sessions_are_independent() {
    let clock = ManualClock::new(START_MS);
    let r = router(memory_app(&clock));
    let mut ids = Vec::new();
    for u in ["a", "b"] {
        let (_, v) = call(&r, "POST", "/session", Some(&json!({"user_id": u}))).await;
        ids.push(v["session_id"].as_str().unwrap().to_string());
    }
    let (_, a) = call(&r, "POST", &format!("/session/{}/message", ids[0]), Some(&json!({"text": TASKABLE}))).await;
    let (_, b) = call(&r, "POST", &format!("/session/{}/message", ids[1]), Some(&json!({"text": TASKABLE}))).await;
    assert_eq!((a["turn_index"].as_u64(), b["turn_index"].as_u64()), (Some(0), Some(0)));
    // a card of session a cannot be clicked from session b
    let imp = a["recommendation"]["impression_id"].as_str().unwrap();
    let (st, _) = call(&r, "POST", &format!("/session/{}/click", ids[1]), Some(&json!({"impression_id": imp}))).await;
    assert_eq!(st, 404);
    let task = a["survey"]["tasks"][0]["task_id"].as_str().unwrap();
    let body = json!({"task_id": task, "abstain": true, "read_latency_s": 9});
    let (st, _) = call(&r, "POST", &format!("/session/{}/response", ids[1]), Some(&body)).await;
    assert_eq!(st, 404);
}
