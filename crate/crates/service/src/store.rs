//! On-disk session layout:
//!
//! ```text
//! <data>/<session id>/plan.json        config and full schedule, written once
//! <data>/<session id>/session.json     manifest, rewritten atomically
//! <data>/<session id>/responses.jsonl  one scored record per line, append-only
//! ```
//!
//! The JSONL file is the source of truth for progress. Replaying it rebuilds
//! the cursor and status even if the manifest lags behind.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use periph_psych::{ExperimentConfig, TrialRecord, TrialSpec};
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;

use crate::error::StoreError;

pub const PLAN_FILE: &str = "plan.json";
pub const SESSION_FILE: &str = "session.json";
pub const RESPONSES_FILE: &str = "responses.jsonl";

type Result<T> = std::result::Result<T, StoreError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Paused,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub subject: String,
    pub config_hash: String,
    /// Trial ids in presentation order.
    pub schedule: Vec<String>,
    /// Index of the next unanswered trial.
    pub cursor: usize,
    pub status: SessionStatus,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

/// Everything fixed at creation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSession {
    pub session: Session,
    pub plan: SessionPlan,
    pub records: Vec<TrialRecord>,
    /// Bytes of a partially written final line that were dropped.
    pub torn_bytes: usize,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir)
        .and_then(|f| f.sync_all())
        .map_err(|e| StoreError::io(dir, e))
}

/// Write via a temporary file and rename, so readers never see a partial file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| StoreError::json(path, e))?;
    let mut f = File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
    f.write_all(&bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| StoreError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))?;
    if let Some(dir) = path.parent() {
        sync_dir(dir)?;
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::json(path, e))
}

/// Persist a new session. Nothing is visible under `dir` until this returns.
pub fn create_session(dir: &Path, session: &Session, plan: &SessionPlan) -> Result<()> {
    let parent = dir.parent().expect("session dir has a parent");
    let staging = parent.join(format!(".{}.tmp", session.id));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| StoreError::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| StoreError::io(&staging, e))?;
    write_json_atomic(&staging.join(PLAN_FILE), plan)?;
    write_json_atomic(&staging.join(SESSION_FILE), session)?;
    let log = staging.join(RESPONSES_FILE);
    File::create(&log)
        .and_then(|f| f.sync_all())
        .map_err(|e| StoreError::io(&log, e))?;
    sync_dir(&staging)?;
    fs::rename(&staging, dir).map_err(|e| StoreError::io(dir, e))?;
    sync_dir(parent)
}

pub fn write_session(dir: &Path, session: &Session) -> Result<()> {
    write_json_atomic(&dir.join(SESSION_FILE), session)
}

/// Append handle for a session's response log.
#[derive(Debug)]
pub struct ResponseLog {
    path: PathBuf,
    file: tokio::fs::File,
}

impl ResponseLog {
    pub async fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(RESPONSES_FILE);
        let file = tokio::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .await
            .map_err(|e| StoreError::io(&path, e))?;
        Ok(Self { path, file })
    }

    /// Returns only once the line is on disk.
    pub async fn append(&mut self, record: &TrialRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record).map_err(|e| StoreError::json(&self.path, e))?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .await
            .map_err(|e| StoreError::io(&self.path, e))?;
        self.file.flush().await.map_err(|e| StoreError::io(&self.path, e))?;
        self.file.sync_data().await.map_err(|e| StoreError::io(&self.path, e))
    }
}

/// Parse the response log. A final line without its newline is the trace of
/// an append that never completed: it was never acknowledged, so it is
/// dropped. With `repair` the file is also truncated to the last full line.
fn read_records(path: &Path, repair: bool) -> Result<(Vec<TrialRecord>, usize)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(StoreError::io(path, e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let torn = bytes.len() - complete;
    if torn > 0 && repair {
        let f = OpenOptions::new().write(true).open(path).map_err(|e| StoreError::io(path, e))?;
        f.set_len(complete as u64)
            .and_then(|_| f.sync_all())
            .map_err(|e| StoreError::io(path, e))?;
    }
    let mut records = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let r: TrialRecord = serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            msg: format!("line {}: {e}", i + 1),
        })?;
        records.push(r);
    }
    Ok((records, torn))
}

/// Rebuild a session from its directory.
pub fn load_session(dir: &Path, repair: bool) -> Result<LoadedSession> {
    let mut session: Session = read_json(&dir.join(SESSION_FILE))?;
    let plan: SessionPlan = read_json(&dir.join(PLAN_FILE))?;
    let log = dir.join(RESPONSES_FILE);
    let (records, torn_bytes) = read_records(&log, repair)?;
    let corrupt = |msg: String| StoreError::Corrupt {
        path: log.display().to_string(),
        msg,
    };
    if plan.trials.len() != session.schedule.len()
        || plan.trials.iter().zip(&session.schedule).any(|(t, id)| &t.id != id)
    {
        return Err(corrupt("schedule does not match plan".into()));
    }
    if records.len() > session.schedule.len() {
        return Err(corrupt(format!(
            "{} records for {} trials",
            records.len(),
            session.schedule.len()
        )));
    }
    for (i, (r, id)) in records.iter().zip(&session.schedule).enumerate() {
        if &r.trial_id != id || r.session_id != session.id {
            return Err(corrupt(format!(
                "record {i} is for {}/{}, expected {}/{id}",
                r.session_id, r.trial_id, session.id
            )));
        }
    }
    session.cursor = records.len();
    if session.cursor == session.schedule.len() {
        session.status = SessionStatus::Complete;
    } else if session.status == SessionStatus::Complete {
        session.status = SessionStatus::Active;
    }
    Ok(LoadedSession {
        session,
        plan,
        records,
        torn_bytes,
    })
}

/// Every session directory under `root`, sorted by name.
pub fn session_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    let entries = match fs::read_dir(root) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(dirs),
        Err(e) => return Err(StoreError::io(root, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| StoreError::io(root, e))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if path.is_dir() && !hidden && path.join(SESSION_FILE).exists() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
