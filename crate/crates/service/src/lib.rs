//! HTTP service for running oddity and 2AFC sessions: schedules trials,
//! serves stimuli by content hash and stores every scored response in an
//! append-only log before acknowledging it.

pub mod api;
pub mod error;
pub mod store;

use std::path::Path;

pub use api::{router, AppState, ServiceOptions};
pub use error::{ApiError, ReplayError, StoreError};
pub use store::{Session, SessionPlan, SessionStatus};

use periph_psych::{score_session, ScoreTable};

/// A session rebuilt from disk without modifying it.
#[derive(Clone, Debug)]
pub struct Replay {
    pub session: Session,
    pub plan: SessionPlan,
    pub records: Vec<periph_psych::TrialRecord>,
    pub table: ScoreTable,
}

pub fn replay(dir: &Path, exclude_suspect: bool) -> Result<Replay, ReplayError> {
    let loaded = store::load_session(dir, false)?;
    let table = score_session(&loaded.records, &loaded.plan.trials, exclude_suspect)?;
    Ok(Replay {
        session: loaded.session,
        plan: loaded.plan,
        records: loaded.records,
        table,
    })
}

/// Serve until the future `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
