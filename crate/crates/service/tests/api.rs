use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use periph_core::stimulus::{ingest_stimulus_set, StimulusSet};
use periph_core::{BitDepth, ImageBuffer};
use periph_service::store::{self, RESPONSES_FILE};
use periph_service::{router, AppState, ServiceOptions};
use serde_json::{json, Value};
use tower::ServiceExt;

/// `images` tiny originals in one class, with two seeds of every family.
fn stimulus_set(root: &Path, images: usize) -> StimulusSet {
    for i in 0..images {
        let dir = root.join("class0").join(format!("img{i:02}"));
        std::fs::create_dir_all(&dir).unwrap();
        let write = |name: &str, k: usize| {
            let img = ImageBuffer::from_fn(8, 8, |x, y| ((k * 5 + x + 2 * y) % 256) as f64 / 255.0);
            img.save_png(dir.join(name), BitDepth::Eight).unwrap();
        };
        write("original.png", i * 16);
        for (f, fam) in ["standard", "robust", "texform"].iter().enumerate() {
            for seed in 0..2 {
                write(&format!("{fam}_seed{seed}.png"), i * 16 + 1 + f * 2 + seed);
            }
        }
    }
    let out = ingest_stimulus_set(root).unwrap();
    assert!(out.report.is_clean(), "{:?}", out.report);
    out.set
}

struct Fixture {
    _stimuli: tempfile::TempDir,
    data: tempfile::TempDir,
    set: StimulusSet,
}

impl Fixture {
    fn new() -> Self {
        let stimuli = tempfile::tempdir().unwrap();
        let set = stimulus_set(stimuli.path(), 8);
        Self {
            _stimuli: stimuli,
            data: tempfile::tempdir().unwrap(),
            set,
        }
    }

    async fn app(&self) -> Router {
        self.app_with(None).await
    }

    async fn app_with(&self, token: Option<&str>) -> Router {
        let opts = ServiceOptions {
            data_dir: self.data.path().to_path_buf(),
            token: token.map(str::to_string),
        };
        router(AppState::open(opts, Some(self.set.clone())).await.unwrap())
    }
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> (StatusCode, Value) {
    let (status, bytes) = send_raw(app, method, uri, body.map(|b| b.to_string()), headers).await;
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, v)
}

async fn send_raw(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<String>,
    headers: &[(&str, &str)],
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b)),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn small(task: &str) -> Value {
    json!({
        "task": task,
        "eccentricities": [10.0, 20.0],
        "conditions": [{"family": "texform", "variant": "original-vs-synth"}],
        "trials_per_cell": 3,
    })
}

async fn create(app: &Router, subject: &str, task: &str) -> (StatusCode, Value) {
    send(app, "POST", "/sessions", Some(json!({"subject": subject, "config": small(task), "seed": 5})), &[]).await
}

fn nominal(intervals: usize, stimulus_ms: f64) -> Value {
    json!({
        "onsets_ms": (0..intervals).map(|i| 1000.0 + 600.0 * i as f64).collect::<Vec<_>>(),
        "durations_ms": vec![stimulus_ms; intervals],
        "refresh_hz": 60.0,
    })
}

/// The correct answers, read from the stored plan.
fn answers(data: &Path, id: &str) -> Vec<(String, usize, usize)> {
    let loaded = store::load_session(&data.join(id), false).unwrap();
    loaded
        .plan
        .trials
        .iter()
        .map(|t| (t.id.clone(), t.correct, t.intervals.len()))
        .collect()
}

async fn answer(app: &Router, id: &str, trial: &str, response: usize, telemetry: Value) -> (StatusCode, Value) {
    send(
        app,
        "POST",
        &format!("/sessions/{id}/responses"),
        Some(json!({"trial_id": trial, "response": response, "response_time_ms": 640.0, "telemetry": telemetry})),
        &[],
    )
    .await
}

async fn complete_session(f: &Fixture, app: &Router, id: &str) {
    for (trial, correct, intervals) in answers(f.data.path(), id) {
        let (s, _) = answer(app, id, &trial, correct, nominal(intervals, 100.0)).await;
        assert_eq!(s, StatusCode::CREATED);
    }
}

#[tokio::test]
async fn health_reports_sessions_and_stimuli() {
    let f = Fixture::new();
    let app = f.app().await;
    let (s, v) = send(&app, "GET", "/healthz", None, &[]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["sessions"], 0);
    assert_eq!(v["stimuli"], 8 * 7);
}

#[tokio::test]
async fn oddity_session_is_created_and_persisted() {
    let f = Fixture::new();
    let app = f.app().await;
    let (s, v) = create(&app, "s01", "oddity").await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["created"], true);
    let session = &v["session"];
    assert_eq!(session["status"], "active");
    assert_eq!(session["cursor"], 0);
    assert_eq!(session["schedule"].as_array().unwrap().len(), 6);
    let id = session["id"].as_str().unwrap();
    let dir = f.data.path().join(id);
    for file in ["plan.json", "session.json", RESPONSES_FILE] {
        assert!(dir.join(file).exists(), "{file}");
    }
    let (s, got) = send(&app, "GET", &format!("/sessions/{id}"), None, &[]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&got, session);
}

#[tokio::test]
async fn twoafc_requires_completed_oddity() {
    let f = Fixture::new();
    let app = f.app().await;
    let (s, v) = create(&app, "s02", "match2afc").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(v["code"], "oddity_first");

    let (_, v) = create(&app, "s02", "oddity").await;
    let id = v["session"]["id"].as_str().unwrap().to_string();
    // An unfinished oddity session is not enough.
    assert_eq!(create(&app, "s02", "match2afc").await.1["code"], "oddity_first");
    complete_session(&f, &app, &id).await;
    // Another subject's completion does not count.
    assert_eq!(create(&app, "s03", "match2afc").await.1["code"], "oddity_first");
    let (s, v) = create(&app, "s02", "match2afc").await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["session"]["schedule"].as_array().unwrap().len(), 6);
}

#[tokio::test]
async fn idempotency_key_returns_the_same_session() {
    let f = Fixture::new();
    let app = f.app().await;
    let body = json!({"subject": "s04", "config": small("oddity")});
    let (s1, a) = send(&app, "POST", "/sessions", Some(body.clone()), &[("idempotency-key", "k1")]).await;
    let (s2, b) = send(&app, "POST", "/sessions", Some(body.clone()), &[("idempotency-key", "k1")]).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::OK));
    assert_eq!(b["created"], false);
    assert_eq!(a["session"]["id"], b["session"]["id"]);
    // The key can also travel in the body.
    let mut in_body = body.clone();
    in_body["idempotency_key"] = json!("k1");
    let (_, c) = send(&app, "POST", "/sessions", Some(in_body), &[]).await;
    assert_eq!(c["session"]["id"], a["session"]["id"]);

    let mut other = body.clone();
    other["config"]["trials_per_cell"] = json!(2);
    let (s, v) = send(&app, "POST", "/sessions", Some(other), &[("idempotency-key", "k1")]).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "idempotency_conflict");

    let (_, d) = send(&app, "POST", "/sessions", Some(body), &[("idempotency-key", "k2")]).await;
    assert_ne!(d["session"]["id"], a["session"]["id"]);
    // Without a fixed seed every new session draws its own.
    assert_ne!(d["session"]["config_hash"], a["session"]["config_hash"]);
}

#[tokio::test]
async fn bad_requests_carry_codes() {
    let f = Fixture::new();
    let app = f.app().await;
    let (s, v) = send_raw(&app, "POST", "/sessions", Some("{not json".into()), &[]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(serde_json::from_slice::<Value>(&v).unwrap()["code"], "bad_request");

    let mut cfg = small("oddity");
    cfg["trials_per_cell"] = json!(0);
    let (s, v) = send(&app, "POST", "/sessions", Some(json!({"subject": "s", "config": cfg})), &[]).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "invalid_config");

    let (_, v) = send(&app, "POST", "/sessions", Some(json!({"subject": "s", "config": {"task": "odd"}})), &[]).await;
    assert_eq!(v["code"], "invalid_config");
    let (_, v) = send(&app, "POST", "/sessions", Some(json!({"subject": "a b", "config": small("oddity")})), &[]).await;
    assert_eq!(v["code"], "bad_request");

    let mut big = small("oddity");
    big["trials_per_cell"] = json!(50);
    let (s, v) = send(&app, "POST", "/sessions", Some(json!({"subject": "s", "config": big})), &[]).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["code"], "insufficient_stimuli");

    let (s, v) = send(&app, "GET", "/sessions/nope/next", None, &[]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "session_not_found");

    let data = tempfile::tempdir().unwrap();
    let opts = ServiceOptions {
        data_dir: data.path().to_path_buf(),
        token: None,
    };
    let bare = router(AppState::open(opts, None).await.unwrap());
    let (s, v) = create(&bare, "s", "oddity").await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["code"], "stimuli_unavailable");
}

#[tokio::test]
async fn token_guards_creation() {
    let f = Fixture::new();
    let app = f.app_with(Some("sekrit")).await;
    let body = json!({"subject": "s", "config": small("oddity")});
    let (s, v) = send(&app, "POST", "/sessions", Some(body.clone()), &[]).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(v["code"], "unauthorized");
    let (s, _) = send(&app, "POST", "/sessions", Some(body.clone()), &[("authorization", "Bearer nope")]).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = send(&app, "POST", "/sessions", Some(body), &[("authorization", "Bearer sekrit")]).await;
    assert_eq!(s, StatusCode::CREATED);
}

#[tokio::test]
async fn next_is_stable_until_answered_and_hides_the_answer() {
    let f = Fixture::new();
    let app = f.app().await;
    let id = create(&app, "s05", "oddity").await.1["session"]["id"].as_str().unwrap().to_string();
    let uri = format!("/sessions/{id}/next");
    let (s, a) = send(&app, "GET", &uri, None, &[]).await;
    let (_, b) = send(&app, "GET", &uri, None, &[]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a, b);
    assert_eq!(a["done"], false);
    assert_eq!(a["cursor"], 0);
    let trial = &a["trial"];
    assert_eq!(trial["id"], answers(f.data.path(), &id)[0].0);
    assert!(trial.get("correct").is_none());
    assert_eq!(trial["responses"], 3);
    assert_eq!(trial["intervals"].as_array().unwrap().len(), 3);
    assert_eq!(a["timings"]["stimulus_ms"], 100.0);
    assert_eq!(a["timings"]["mask_ms"], 500.0);
    // Default display: a 6.67 degree stimulus is 256 px wide, and the
    // eccentricity offset uses the same scale.
    let size = trial["placements"][0]["size"].as_f64().unwrap();
    assert!((size - 256.0).abs() <= 1.0);
    let x = trial["placements"][0]["x"].as_f64().unwrap();
    let ecc = trial["eccentricity_deg"].as_f64().unwrap();
    assert!(((x - 1720.0).abs() - ecc * size / 6.67).abs() < 1e-9);

    for st in trial["stimuli"].as_array().unwrap() {
        let url = st["url"].as_str().unwrap();
        assert_eq!(url, format!("/stimuli/{}.png", st["hash"].as_str().unwrap()));
        let (s, bytes) = send_raw(&app, "GET", url, None, &[]).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(&bytes[1..4], b"PNG");
    }
    let (s, v) = send(&app, "GET", &format!("/stimuli/{}.png", "0".repeat(64)), None, &[]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "stimulus_not_found");
    let (s, _) = send(&app, "GET", "/stimuli/..%2Fplan.json", None, &[]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn responses_are_scored_sequenced_and_deduplicated() {
    let f = Fixture::new();
    let app = f.app().await;
    let id = create(&app, "s06", "oddity").await.1["session"]["id"].as_str().unwrap().to_string();
    let plan = answers(f.data.path(), &id);
    let (t0, c0, n0) = plan[0].clone();

    let (s, v) = answer(&app, &id, &plan[1].0, 0, nominal(3, 100.0)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "out_of_sequence");
    assert_eq!(v["expected_trial"], t0);
    let (s, v) = answer(&app, &id, "t9999", 0, nominal(3, 100.0)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("unknown_trial")));
    let (s, v) = answer(&app, &id, &t0, 3, nominal(3, 100.0)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_response")));

    let (s, v) = answer(&app, &id, &t0, c0, nominal(n0, 100.0)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let record = v["record"].clone();
    assert_eq!(record["correct"], true);
    assert_eq!(record["telemetry_valid"], true);
    assert_eq!(record["timing_suspect"], false);
    assert_eq!(record["schema_version"], 1);
    assert_eq!(v["cursor"], 1);

    let (s, v) = answer(&app, &id, &t0, (c0 + 1) % 3, nominal(n0, 100.0)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "duplicate_response");
    assert_eq!(v["record"], record);

    let (t1, c1, n1) = plan[1].clone();
    let (_, v) = answer(&app, &id, &t1, (c1 + 1) % 3, nominal(n1, 100.0)).await;
    assert_eq!(v["record"]["correct"], false);

    let log = std::fs::read_to_string(f.data.path().join(&id).join(RESPONSES_FILE)).unwrap();
    assert_eq!(log.lines().count(), 2);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first, record);
}

#[tokio::test]
async fn telemetry_flags() {
    let f = Fixture::new();
    let app = f.app().await;
    let id = create(&app, "s07", "oddity").await.1["session"]["id"].as_str().unwrap().to_string();
    let plan = answers(f.data.path(), &id);

    // 140 ms against a nominal 100 ms is 40% long, beyond one 60 Hz frame.
    let (_, v) = answer(&app, &id, &plan[0].0, plan[0].1, nominal(3, 140.0)).await;
    assert_eq!(v["record"]["timing_suspect"], true);
    assert_eq!(v["record"]["telemetry_valid"], true);
    // One frame off is within budget.
    let (_, v) = answer(&app, &id, &plan[1].0, plan[1].1, nominal(3, 116.0)).await;
    assert_eq!(v["record"]["timing_suspect"], false);
    // Malformed telemetry is accepted and marked, and the response counts.
    let (s, v) = answer(&app, &id, &plan[2].0, plan[2].1, json!("garbled")).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["record"]["telemetry_valid"], false);
    assert_eq!(v["record"]["correct"], true);
    let (_, v) = answer(&app, &id, &plan[3].0, plan[3].1, json!({"onsets_ms": [3.0, 2.0, 1.0], "durations_ms": [100.0, 100.0, 100.0]})).await;
    assert_eq!(v["record"]["telemetry_valid"], false);
    assert_eq!(v["cursor"], 4);

    let (_, r) = send(&app, "GET", &format!("/sessions/{id}/results?exclude_suspect=true"), None, &[]).await;
    // Suspect timing and unusable telemetry are both excluded.
    assert_eq!(r["table"]["excluded"], 3);
    let (_, r) = send(&app, "GET", &format!("/sessions/{id}/results"), None, &[]).await;
    assert_eq!(r["table"]["excluded"], 0);
    assert_eq!(r["records"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn final_response_completes_the_session() {
    let f = Fixture::new();
    let app = f.app().await;
    let id = create(&app, "s08", "oddity").await.1["session"]["id"].as_str().unwrap().to_string();
    complete_session(&f, &app, &id).await;
    let (s, v) = send(&app, "GET", &format!("/sessions/{id}/next"), None, &[]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["done"], true);
    assert_eq!(v["status"], "complete");
    let (_, r) = send(&app, "GET", &format!("/sessions/{id}/results"), None, &[]).await;
    assert_eq!(r["session"]["status"], "complete");
    assert_eq!(r["session"]["cursor"], 6);
    let cells = r["table"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    assert!(cells.iter().all(|c| c["k"] == 3 && c["n"] == 3));
    let last = answers(f.data.path(), &id).pop().unwrap();
    let (s, v) = answer(&app, &id, &last.0, last.1, Value::Null).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("duplicate_response")));
}

#[tokio::test]
async fn pause_and_resume() {
    let f = Fixture::new();
    let app = f.app().await;
    let id = create(&app, "s09", "oddity").await.1["session"]["id"].as_str().unwrap().to_string();
    let plan = answers(f.data.path(), &id);
    let status = |s: &str| Some(json!({ "status": s }));
    let (s, v) = send(&app, "POST", &format!("/sessions/{id}/status"), status("paused"), &[]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "paused");
    let (s, v) = send(&app, "GET", &format!("/sessions/{id}/next"), None, &[]).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("session_paused")));
    let (_, v) = answer(&app, &id, &plan[0].0, plan[0].1, Value::Null).await;
    assert_eq!(v["code"], "session_paused");
    let (_, v) = send(&app, "POST", &format!("/sessions/{id}/status"), status("complete"), &[]).await;
    assert_eq!(v["code"], "bad_request");
    send(&app, "POST", &format!("/sessions/{id}/status"), status("active"), &[]).await;
    let (s, _) = answer(&app, &id, &plan[0].0, plan[0].1, Value::Null).await;
    assert_eq!(s, StatusCode::CREATED);
}

#[tokio::test]
async fn restart_replays_the_log_exactly() {
    let f = Fixture::new();
    let id;
    let before;
    let next_before;
    {
        let app = f.app().await;
        id = create(&app, "s10", "oddity").await.1["session"]["id"].as_str().unwrap().to_string();
        let plan = answers(f.data.path(), &id);
        for (i, (t, c, n)) in plan.iter().take(4).enumerate() {
            answer(&app, &id, t, (c + i) % 3, nominal(*n, 100.0 + 10.0 * i as f64)).await;
        }
        before = send(&app, "GET", &format!("/sessions/{id}/results"), None, &[]).await.1;
        next_before = send(&app, "GET", &format!("/sessions/{id}/next"), None, &[]).await.1;
    }
    let app = f.app().await;
    let after = send(&app, "GET", &format!("/sessions/{id}/results"), None, &[]).await.1;
    assert_eq!(after, before);
    assert_eq!(send(&app, "GET", &format!("/sessions/{id}/next"), None, &[]).await.1, next_before);

    // A stale manifest is repaired from the log.
    let dir = f.data.path().join(&id);
    let mut manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("session.json")).unwrap()).unwrap();
    manifest["cursor"] = json!(0);
    std::fs::write(dir.join("session.json"), manifest.to_string()).unwrap();
    let replayed = periph_service::replay(&dir, false).unwrap();
    assert_eq!(replayed.session.cursor, 4);
    assert_eq!(serde_json::to_value(&replayed.records).unwrap(), before["records"]);
    assert_eq!(serde_json::to_value(&replayed.table).unwrap(), before["table"]);
}

#[tokio::test]
async fn torn_log_tail_is_dropped() {
    let f = Fixture::new();
    let id;
    {
        let app = f.app().await;
        id = create(&app, "s11", "oddity").await.1["session"]["id"].as_str().unwrap().to_string();
        let plan = answers(f.data.path(), &id);
        answer(&app, &id, &plan[0].0, plan[0].1, Value::Null).await;
    }
    let log = f.data.path().join(&id).join(RESPONSES_FILE);
    let mut bytes = std::fs::read(&log).unwrap();
    let good = bytes.len();
    bytes.extend_from_slice(b"{\"schema_version\":1,\"sess");
    std::fs::write(&log, &bytes).unwrap();

    let app = f.app().await;
    assert_eq!(std::fs::read(&log).unwrap().len(), good);
    let plan = answers(f.data.path(), &id);
    let (_, v) = send(&app, "GET", &format!("/sessions/{id}/next"), None, &[]).await;
    assert_eq!(v["trial"]["id"], plan[1].0);
    let (s, _) = answer(&app, &id, &plan[1].0, plan[1].1, Value::Null).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_retries_store_one_record() {
    let f = Fixture::new();
    let app = f.app().await;
    let id = create(&app, "s12", "oddity").await.1["session"]["id"].as_str().unwrap().to_string();
    let (t, c, n) = answers(f.data.path(), &id)[0].clone();
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let (app, id, t) = (app.clone(), id.clone(), t.clone());
            tokio::spawn(async move { answer(&app, &id, &t, c, nominal(n, 100.0)).await.0 })
        })
        .collect();
    let mut statuses = Vec::new();
    for task in tasks {
        statuses.push(task.await.unwrap());
    }
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::CREATED).count(), 1);
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::CONFLICT).count(), 7);
    let log = std::fs::read_to_string(f.data.path().join(&id).join(RESPONSES_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_keep_separate_logs() {
    let f = Fixture::new();
    let app = f.app().await;
    let mut ids = Vec::new();
    for subject in ["a1", "a2", "a3"] {
        ids.push(create(&app, subject, "oddity").await.1["session"]["id"].as_str().unwrap().to_string());
    }
    let runs: Vec<_> = ids
        .iter()
        .map(|id| {
            let (app, id, plan) = (app.clone(), id.clone(), answers(f.data.path(), id));
            tokio::spawn(async move {
                for (t, c, n) in plan {
                    assert_eq!(answer(&app, &id, &t, c, nominal(n, 100.0)).await.0, StatusCode::CREATED);
                }
            })
        })
        .collect();
    for r in runs {
        r.await.unwrap();
    }
    for id in &ids {
        let log = std::fs::read_to_string(f.data.path().join(id).join(RESPONSES_FILE)).unwrap();
        let schedule: Vec<String> = answers(f.data.path(), id).into_iter().map(|a| a.0).collect();
        let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 6);
        for (line, t) in lines.iter().zip(&schedule) {
            assert_eq!(line["session_id"], id.as_str());
            assert_eq!(line["trial_id"], t.as_str());
        }
    }
}
