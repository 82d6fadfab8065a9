use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use periph_core::stimulus::StimulusSet;
use periph_psych::trials::Placement;
use periph_psych::{
    generate_trials, score_session, Condition, ExperimentConfig, Task, Telemetry, TrialRecord, TrialSpec,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult, StoreError};
use crate::store::{self, LoadedSession, ResponseLog, Session, SessionPlan, SessionStatus};

/// Immutable view of a session handed to readers.
#[derive(Clone, Debug)]
struct Snapshot {
    session: Session,
    records: Vec<TrialRecord>,
}

struct SessionHandle {
    dir: PathBuf,
    plan: Arc<SessionPlan>,
    snapshot: RwLock<Arc<Snapshot>>,
    /// Serializes every mutation of this session.
    log: tokio::sync::Mutex<ResponseLog>,
}

impl SessionHandle {
    fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn publish(&self, snap: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(snap);
    }
}

struct Inner {
    data_dir: PathBuf,
    token: Option<String>,
    stimuli: Option<StimulusSet>,
    files: BTreeMap<String, PathBuf>,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    /// Creation is serialized so idempotency and ordering checks see a
    /// consistent set of sessions.
    create: tokio::sync::Mutex<()>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

#[derive(Clone, Debug, Default)]
pub struct ServiceOptions {
    pub data_dir: PathBuf,
    /// Shared experimenter token required to create or pause sessions.
    pub token: Option<String>,
}

impl AppState {
    /// Load every stored session under the data directory.
    pub async fn open(opts: ServiceOptions, stimuli: Option<StimulusSet>) -> Result<Self, StoreError> {
        std::fs::create_dir_all(&opts.data_dir).map_err(|e| StoreError::io(&opts.data_dir, e))?;
        let mut sessions = HashMap::new();
        for dir in store::session_dirs(&opts.data_dir)? {
            let loaded = store::load_session(&dir, true)?;
            if loaded.torn_bytes > 0 {
                tracing::warn!(session = %loaded.session.id, bytes = loaded.torn_bytes, "dropped torn log tail");
            }
            let handle = handle_for(dir, loaded).await?;
            let id = handle.snapshot().session.id.clone();
            sessions.insert(id, Arc::new(handle));
        }
        let files = stimuli.as_ref().map(|s| s.by_hash()).unwrap_or_default();
        Ok(Self(Arc::new(Inner {
            data_dir: opts.data_dir,
            token: opts.token,
            stimuli,
            files,
            sessions: RwLock::new(sessions),
            create: tokio::sync::Mutex::new(()),
        })))
    }

    pub fn data_dir(&self) -> &Path {
        &self.0.data_dir
    }

    fn session(&self, id: &str) -> ApiResult<Arc<SessionHandle>> {
        self.0
            .sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::SessionNotFound(id.to_string()))
    }

    fn all_sessions(&self) -> Vec<Arc<SessionHandle>> {
        self.0.sessions.read().expect("sessions lock").values().cloned().collect()
    }

    fn check_token(&self, headers: &HeaderMap) -> ApiResult<()> {
        let Some(token) = &self.0.token else {
            return Ok(());
        };
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given == Some(token.as_str()) {
            Ok(())
        } else {
            Err(ApiError::Unauthorized)
        }
    }
}

async fn handle_for(dir: PathBuf, loaded: LoadedSession) -> Result<SessionHandle, StoreError> {
    let log = ResponseLog::open(&dir).await?;
    Ok(SessionHandle {
        dir,
        plan: Arc::new(loaded.plan),
        snapshot: RwLock::new(Arc::new(Snapshot {
            session: loaded.session,
            records: loaded.records,
        })),
        log: tokio::sync::Mutex::new(log),
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/status", post(set_status))
        .route("/sessions/{id}/next", get(next_trial))
        .route("/sessions/{id}/responses", post(submit_response))
        .route("/sessions/{id}/results", get(results))
        .route("/stimuli/{file}", get(stimulus))
        .with_state(state)
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

async fn healthz(State(state): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "sessions": state.0.sessions.read().expect("sessions lock").len(),
        "stimuli": state.0.files.len(),
    }))
}

#[derive(Deserialize)]
struct CreateRequest {
    subject: String,
    /// Fields override the defaults for `config.task`.
    config: Value,
    /// Schedule seed; drawn fresh when absent.
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    idempotency_key: Option<String>,
}

#[derive(Serialize)]
struct CreateResponse {
    created: bool,
    session: Session,
    warnings: Vec<String>,
}

fn valid_subject(s: &str) -> bool {
    !s.is_empty() && s.len() <= 64 && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Overlay the requested fields onto the defaults for the requested task.
fn resolve_config(requested: &Value) -> ApiResult<ExperimentConfig> {
    let fields = requested
        .as_object()
        .ok_or_else(|| ApiError::InvalidConfig("config must be an object".into()))?;
    let task: Task = serde_json::from_value(fields.get("task").cloned().unwrap_or(Value::Null))
        .map_err(|e| ApiError::InvalidConfig(format!("task: {e}")))?;
    let mut base = serde_json::to_value(ExperimentConfig::new(task)).expect("config serializes");
    base.as_object_mut()
        .expect("object")
        .extend(fields.iter().map(|(k, v)| (k.clone(), v.clone())));
    serde_json::from_value(base).map_err(|e| ApiError::InvalidConfig(e.to_string()))
}

async fn create_session(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    state.check_token(&headers)?;
    let req: CreateRequest = parse(&body)?;
    let key = headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or(req.idempotency_key.clone());
    if !valid_subject(&req.subject) {
        return Err(ApiError::BadRequest(
            "subject must be 1-64 characters of [A-Za-z0-9_-]".into(),
        ));
    }
    let mut cfg = resolve_config(&req.config)?;
    let explicit_seed = req.seed.or(if req.config.get("seed").is_some() { Some(cfg.seed) } else { None });
    if let Some(seed) = explicit_seed {
        cfg.seed = seed;
    }
    let warnings = cfg.validate().map_err(|e| ApiError::InvalidConfig(e.to_string()))?;

    let _guard = state.0.create.lock().await;
    let existing = state.all_sessions();
    if let Some(key) = &key {
        for h in &existing {
            let snap = h.snapshot();
            if snap.session.idempotency_key.as_deref() == Some(key) {
                let mut stored = h.plan.config.clone();
                if explicit_seed.is_none() {
                    stored.seed = cfg.seed;
                }
                if snap.session.subject != req.subject || stored != cfg {
                    return Err(ApiError::IdempotencyConflict(key.clone()));
                }
                let body = CreateResponse {
                    created: false,
                    session: snap.session.clone(),
                    warnings,
                };
                return Ok((StatusCode::OK, Json(body)).into_response());
            }
        }
    }
    if cfg.task == Task::Match2afc {
        let done_oddity = existing.iter().any(|h| {
            let s = h.snapshot();
            s.session.subject == req.subject
                && h.plan.config.task == Task::Oddity
                && s.session.status == SessionStatus::Complete
        });
        if !done_oddity {
            return Err(ApiError::OddityFirst(req.subject));
        }
    }
    let set = state.0.stimuli.clone().ok_or(ApiError::StimuliUnavailable)?;
    if explicit_seed.is_none() {
        cfg.seed = rand::random();
    }
    let gen_cfg = cfg.clone();
    let trials = tokio::task::spawn_blocking(move || generate_trials(&gen_cfg, &set))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(|e| match e {
            periph_psych::Error::Shortfall(_) => ApiError::InsufficientStimuli(e.to_string()),
            other => ApiError::InvalidConfig(other.to_string()),
        })?;

    let now = store::now_ms();
    let session = Session {
        id: uuid::Uuid::new_v4().to_string(),
        subject: req.subject,
        config_hash: cfg.hash(),
        schedule: trials.iter().map(|t| t.id.clone()).collect(),
        cursor: 0,
        status: SessionStatus::Active,
        created_at_ms: now,
        updated_at_ms: now,
        idempotency_key: key,
    };
    let plan = SessionPlan { config: cfg, trials };
    let dir = state.0.data_dir.join(&session.id);
    let (d, s, p) = (dir.clone(), session.clone(), plan.clone());
    tokio::task::spawn_blocking(move || store::create_session(&d, &s, &p))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let handle = handle_for(
        dir,
        LoadedSession {
            session: session.clone(),
            plan,
            records: Vec::new(),
            torn_bytes: 0,
        },
    )
    .await?;
    state
        .0
        .sessions
        .write()
        .expect("sessions lock")
        .insert(session.id.clone(), Arc::new(handle));
    tracing::info!(session = %session.id, subject = %session.subject, trials = session.schedule.len(), "session created");
    let body = CreateResponse {
        created: true,
        session,
        warnings,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Session>> {
    Ok(Json(state.session(&id)?.snapshot().session.clone()))
}

#[derive(Deserialize)]
struct StatusRequest {
    status: SessionStatus,
}

async fn set_status(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Session>> {
    state.check_token(&headers)?;
    let req: StatusRequest = parse(&body)?;
    let h = state.session(&id)?;
    let _log = h.log.lock().await;
    let snap = h.snapshot();
    if snap.session.status == SessionStatus::Complete || req.status == SessionStatus::Complete {
        return Err(ApiError::BadRequest(
            "completion follows from the responses and cannot be set".into(),
        ));
    }
    let mut session = snap.session.clone();
    session.status = req.status;
    session.updated_at_ms = store::now_ms();
    store::write_session(&h.dir, &session)?;
    h.publish(Snapshot {
        session: session.clone(),
        records: snap.records.clone(),
    });
    Ok(Json(session))
}

#[derive(Serialize)]
struct StimulusPayload {
    hash: String,
    url: String,
}

/// What the browser needs to run one trial. The correct answer is withheld.
#[derive(Serialize)]
struct TrialPayload {
    id: String,
    task: Task,
    condition: Condition,
    eccentricity_deg: f64,
    stimuli: Vec<StimulusPayload>,
    /// Stimulus indices shown in each interval.
    intervals: Vec<Vec<usize>>,
    /// Screen position and size in pixels, per stimulus.
    placements: Vec<Placement>,
    /// Number of response alternatives.
    responses: usize,
}

fn trial_payload(t: &TrialSpec) -> TrialPayload {
    TrialPayload {
        id: t.id.clone(),
        task: t.task,
        condition: t.condition,
        eccentricity_deg: t.eccentricity_deg,
        stimuli: t
            .stimuli
            .iter()
            .map(|s| StimulusPayload {
                hash: s.hash.clone(),
                url: format!("/stimuli/{}.png", s.hash),
            })
            .collect(),
        intervals: t.intervals.clone(),
        placements: t.placements.clone(),
        responses: t.responses(),
    }
}

async fn next_trial(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let h = state.session(&id)?;
    let snap = h.snapshot();
    let s = &snap.session;
    match s.status {
        SessionStatus::Complete => Ok(Json(json!({
            "done": true,
            "session_id": s.id,
            "status": s.status,
            "total": s.schedule.len(),
        }))),
        SessionStatus::Paused => Err(ApiError::SessionPaused(s.id.clone())),
        SessionStatus::Active => {
            let cfg = &h.plan.config;
            Ok(Json(json!({
                "done": false,
                "session_id": s.id,
                "cursor": s.cursor,
                "total": s.schedule.len(),
                "trial": trial_payload(&h.plan.trials[s.cursor]),
                "timings": cfg.timings(),
                "geometry": cfg.geometry,
            })))
        }
    }
}

#[derive(Deserialize)]
struct ResponseRequest {
    trial_id: String,
    response: usize,
    #[serde(default)]
    response_time_ms: f64,
    /// Parsed leniently: anything unusable is stored as invalid telemetry.
    #[serde(default)]
    telemetry: Value,
}

async fn submit_response(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: ResponseRequest = parse(&body)?;
    let h = state.session(&id)?;
    let mut log = h.log.lock().await;
    let snap = h.snapshot();
    let s = &snap.session;

    let Some(index) = s.schedule.iter().position(|t| *t == req.trial_id) else {
        return Err(ApiError::UnknownTrial(req.trial_id));
    };
    if index < s.cursor {
        return Err(ApiError::DuplicateResponse(Box::new(snap.records[index].clone())));
    }
    if s.status == SessionStatus::Paused {
        return Err(ApiError::SessionPaused(s.id.clone()));
    }
    if index != s.cursor {
        return Err(ApiError::OutOfSequence {
            expected: s.schedule.get(s.cursor).cloned(),
            got: req.trial_id,
        });
    }
    if !(req.response_time_ms.is_finite() && req.response_time_ms >= 0.0) {
        return Err(ApiError::InvalidResponse("response_time_ms must be finite and >= 0".into()));
    }
    let telemetry: Telemetry = serde_json::from_value(req.telemetry).unwrap_or_default();
    let spec = &h.plan.trials[index];
    let record = TrialRecord::score(
        spec,
        &s.id,
        req.response,
        req.response_time_ms,
        &telemetry,
        h.plan.config.timings(),
    )
    .map_err(|e| ApiError::InvalidResponse(e.to_string()))?;

    log.append(&record).await?;

    let mut session = s.clone();
    session.cursor += 1;
    session.updated_at_ms = store::now_ms();
    if session.cursor == session.schedule.len() {
        session.status = SessionStatus::Complete;
    }
    let mut records = snap.records.clone();
    records.push(record.clone());
    h.publish(Snapshot {
        session: session.clone(),
        records,
    });
    // The log already holds the record; a stale manifest is repaired on load.
    if let Err(e) = store::write_session(&h.dir, &session) {
        tracing::warn!(session = %session.id, error = %e, "manifest update failed");
    }
    let body = json!({
        "record": record,
        "cursor": session.cursor,
        "done": session.status == SessionStatus::Complete,
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Deserialize)]
struct ResultsQuery {
    #[serde(default)]
    exclude_suspect: bool,
}

async fn results(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ResultsQuery>,
) -> ApiResult<Json<Value>> {
    let h = state.session(&id)?;
    let snap = h.snapshot();
    let table = score_session(&snap.records, &h.plan.trials, q.exclude_suspect)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(json!({
        "session": snap.session,
        "config": h.plan.config,
        "records": snap.records,
        "table": table,
    })))
}

async fn stimulus(State(state): State<AppState>, UrlPath(file): UrlPath<String>) -> ApiResult<Response> {
    let hash = file
        .strip_suffix(".png")
        .filter(|h| h.len() == 64 && h.chars().all(|c| c.is_ascii_hexdigit()))
        .ok_or_else(|| ApiError::StimulusNotFound(file.clone()))?;
    let path = state
        .0
        .files
        .get(hash)
        .ok_or_else(|| ApiError::StimulusNotFound(hash.to_string()))?;
    let bytes = tokio::fs::read(path)
        .await
        .map_err(|e| ApiError::Store(StoreError::io(path, e)))?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    )
        .into_response())
}
