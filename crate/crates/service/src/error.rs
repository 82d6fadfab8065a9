use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use periph_psych::TrialRecord;
use serde_json::{json, Value};
use thiserror::Error;

/// Failures of the storage layer, independent of HTTP.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {msg}")]
    Corrupt { path: String, msg: String },
}

impl StoreError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: &std::path::Path, source: serde_json::Error) -> Self {
        StoreError::Json {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Every error the API returns. The body is `{"code", "message", ...}` where
/// `code` is stable and machine-readable.
#[derive(Debug, Error)]
pub enum ApiError {
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("missing or wrong experimenter token")]
    Unauthorized,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("subject {0:?} must complete an oddity session before a 2AFC session")]
    OddityFirst(String),
    #[error("idempotency key {0:?} was already used for a different request")]
    IdempotencyConflict(String),
    #[error("no stimulus set is loaded")]
    StimuliUnavailable,
    #[error("stimulus set cannot fill the schedule: {0}")]
    InsufficientStimuli(String),
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("stimulus {0} not found")]
    StimulusNotFound(String),
    #[error("session {0} is paused")]
    SessionPaused(String),
    #[error("trial {0} is not in this session")]
    UnknownTrial(String),
    #[error("expected a response to {expected:?}, got {got:?}")]
    OutOfSequence { expected: Option<String>, got: String },
    #[error("trial {} already answered", .0.trial_id)]
    DuplicateResponse(Box<TrialRecord>),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Unauthorized => "unauthorized",
            ApiError::InvalidConfig(_) => "invalid_config",
            ApiError::OddityFirst(_) => "oddity_first",
            ApiError::IdempotencyConflict(_) => "idempotency_conflict",
            ApiError::StimuliUnavailable => "stimuli_unavailable",
            ApiError::InsufficientStimuli(_) => "insufficient_stimuli",
            ApiError::SessionNotFound(_) => "session_not_found",
            ApiError::StimulusNotFound(_) => "stimulus_not_found",
            ApiError::SessionPaused(_) => "session_paused",
            ApiError::UnknownTrial(_) => "unknown_trial",
            ApiError::OutOfSequence { .. } => "out_of_sequence",
            ApiError::DuplicateResponse(_) => "duplicate_response",
            ApiError::InvalidResponse(_) => "invalid_response",
            ApiError::Store(_) => "storage_error",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::InvalidConfig(_) | ApiError::InvalidResponse(_) | ApiError::UnknownTrial(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ApiError::OddityFirst(_) => StatusCode::FORBIDDEN,
            ApiError::IdempotencyConflict(_)
            | ApiError::SessionPaused(_)
            | ApiError::OutOfSequence { .. }
            | ApiError::DuplicateResponse(_) => StatusCode::CONFLICT,
            ApiError::StimuliUnavailable | ApiError::InsufficientStimuli(_) => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::SessionNotFound(_) | ApiError::StimulusNotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Store(_) | ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn details(&self) -> Option<Value> {
        match self {
            ApiError::DuplicateResponse(r) => Some(json!({ "record": r })),
            ApiError::OutOfSequence { expected, .. } => Some(json!({ "expected_trial": expected })),
            _ => None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if matches!(self, ApiError::Store(_) | ApiError::Internal(_)) {
            tracing::error!(error = %self, "request failed");
        }
        let mut body = json!({ "code": self.code(), "message": self.to_string() });
        if let Some(Value::Object(extra)) = self.details() {
            body.as_object_mut().expect("object").extend(extra);
        }
        (self.status(), Json(body)).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Score(#[from] periph_psych::Error),
}
