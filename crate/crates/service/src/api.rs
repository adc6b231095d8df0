//! Routes, envelopes and the error-to-status mapping.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use sourcerer_core::domain::{FindingId, Verdict};
use sourcerer_core::ingest::AppProfile;
use sourcerer_core::reconcile::MatchGranularity;
use sourcerer_core::report::{render_report, ReportFormat};
use sourcerer_core::session::{AssetDecision, LoggedEvent, SessionEvent};
use sourcerer_core::views::{assets_view, ranked_view, AssetsView, RankedView};

use crate::store::{SessionStore, Snapshot};
use crate::ServiceError;

pub const API_SCHEMA_VERSION: u32 = 1;
pub const IF_REVISION_NEWER: &str = "if-revision-newer";

/// Every response body, including errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope<T> {
    pub schema_version: u32,
    pub state_revision: u64,
    pub payload: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub profile: AppProfile,
    pub threshold: usize,
    pub granularity: MatchGranularity,
    pub tools: Vec<String>,
    pub events: usize,
    pub assets: AssetsView,
    pub ranked: RankedView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationResult {
    pub applied: LoggedEvent,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    state: AssetDecision,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    verdict: Verdict,
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

#[derive(Debug)]
pub struct AppState {
    pub store: SessionStore,
    /// How long a request carrying `If-Revision-Newer` waits before 304.
    pub poll_timeout: Duration,
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", get(session))
        .route("/assets", get(assets))
        .route("/assets/{id}/decision", post(decide_asset))
        .route("/findings/ranked", get(ranked))
        .route("/findings/{id}/verdict", post(set_verdict))
        .route("/report", get(report))
        .with_state(state)
}

struct Failure {
    status: StatusCode,
    revision: u64,
    error: &'static str,
    message: String,
}

impl Failure {
    fn new(status: StatusCode, revision: u64, error: &'static str, message: impl Into<String>) -> Self {
        Failure {
            status,
            revision,
            error,
            message: message.into(),
        }
    }

    fn from_service(e: ServiceError, revision: u64) -> Self {
        use sourcerer_core::Error as Core;
        let (status, error) = match &e {
            ServiceError::Core(Core::UnknownEntity { .. }) => (StatusCode::NOT_FOUND, "unknown-entity"),
            ServiceError::Core(Core::IllegalTransition(_)) => (StatusCode::CONFLICT, "illegal-transition"),
            ServiceError::Core(Core::ConfigInvalid(_)) => (StatusCode::BAD_REQUEST, "config-invalid"),
            ServiceError::Core(_) => (StatusCode::INTERNAL_SERVER_ERROR, "session-error"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "persistence-failure"),
        };
        if status.is_server_error() {
            log::error!("{e}");
        }
        Failure::new(status, revision, error, e.to_string())
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let body = ApiEnvelope {
            schema_version: API_SCHEMA_VERSION,
            state_revision: self.revision,
            payload: ApiError {
                error: self.error.into(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

fn envelope<T: Serialize>(snapshot: &Snapshot, payload: T) -> Response {
    Json(ApiEnvelope {
        schema_version: API_SCHEMA_VERSION,
        state_revision: snapshot.revision,
        payload,
    })
    .into_response()
}

/// Outcome of a conditional read.
enum Wait {
    Ready(Arc<Snapshot>),
    NotModified,
}

/// Honours `If-Revision-Newer: n` by waiting until the committed revision
/// exceeds `n` or the poll timeout elapses.
async fn await_revision(state: &AppState, headers: &HeaderMap) -> Result<Wait, Failure> {
    let Some(raw) = headers.get(IF_REVISION_NEWER) else {
        return Ok(Wait::Ready(state.store.snapshot()));
    };
    let current = state.store.snapshot();
    let seen: u64 = raw.to_str().ok().and_then(|s| s.trim().parse().ok()).ok_or_else(|| {
        Failure::new(
            StatusCode::BAD_REQUEST,
            current.revision,
            "malformed-header",
            "If-Revision-Newer must be a non-negative integer",
        )
    })?;
    let mut updates = state.store.subscribe();
    let newer = tokio::time::timeout(state.poll_timeout, updates.wait_for(|s| s.revision > seen)).await;
    Ok(match newer {
        Ok(Ok(snapshot)) => Wait::Ready(snapshot.clone()),
        _ => Wait::NotModified,
    })
}

macro_rules! conditional {
    ($state:expr, $headers:expr) => {
        match await_revision(&$state, &$headers).await {
            Ok(Wait::Ready(snapshot)) => snapshot,
            Ok(Wait::NotModified) => return StatusCode::NOT_MODIFIED.into_response(),
            Err(failure) => return failure.into_response(),
        }
    };
}

async fn health(State(state): State<Shared>) -> Response {
    let snapshot = state.store.snapshot();
    let payload = Health {
        status: "ok".into(),
        session_id: snapshot.session.id.clone(),
    };
    envelope(&snapshot, payload)
}

async fn session(State(state): State<Shared>, headers: HeaderMap) -> Response {
    let snapshot = conditional!(state, headers);
    let s = &snapshot.session;
    let view = SessionView {
        session_id: s.id.clone(),
        profile: s.profile.clone(),
        threshold: s.config.threshold,
        granularity: s.config.granularity,
        tools: s.tools().into_iter().map(|t| t.to_string()).collect(),
        events: s.events.len(),
        assets: assets_view(s),
        ranked: ranked_view(s),
    };
    envelope(&snapshot, view)
}

async fn assets(State(state): State<Shared>, headers: HeaderMap) -> Response {
    let snapshot = conditional!(state, headers);
    let view = assets_view(&snapshot.session);
    envelope(&snapshot, view)
}

async fn ranked(State(state): State<Shared>, headers: HeaderMap) -> Response {
    let snapshot = conditional!(state, headers);
    let view = ranked_view(&snapshot.session);
    envelope(&snapshot, view)
}

async fn report(State(state): State<Shared>, headers: HeaderMap, Query(query): Query<ReportQuery>) -> Response {
    let snapshot = conditional!(state, headers);
    let format = match query.format.as_deref().unwrap_or("json").parse::<ReportFormat>() {
        Ok(f) => f,
        Err(message) => return Failure::new(StatusCode::BAD_REQUEST, snapshot.revision, "unknown-format", message).into_response(),
    };
    let bytes = match render_report(&snapshot.session, format) {
        Ok(b) => b,
        Err(e) => return Failure::from_service(e.into(), snapshot.revision).into_response(),
    };
    match format {
        ReportFormat::Json => {
            let value: serde_json::Value = serde_json::from_slice(&bytes).expect("rendered report is JSON");
            envelope(&snapshot, value)
        }
        ReportFormat::Markdown => envelope(
            &snapshot,
            serde_json::json!({ "format": "markdown", "content": String::from_utf8_lossy(&bytes) }),
        ),
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(state: &AppState, body: &Bytes) -> Result<T, Failure> {
    serde_json::from_slice(body).map_err(|e| {
        Failure::new(
            StatusCode::BAD_REQUEST,
            state.store.snapshot().revision,
            "malformed-body",
            e.to_string(),
        )
    })
}

async fn commit(
    state: &AppState,
    build: impl FnOnce(&sourcerer_core::session::TriageSession) -> Result<SessionEvent, sourcerer_core::Error>,
) -> Response {
    match state.store.mutate(build).await {
        Ok((snapshot, applied)) => envelope(&snapshot, MutationResult { applied }),
        Err(e) => Failure::from_service(e, state.store.snapshot().revision).into_response(),
    }
}

async fn decide_asset(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> Response {
    let body: DecisionBody = match parse_body(&state, &body) {
        Ok(b) => b,
        Err(failure) => return failure.into_response(),
    };
    commit(&state, |session| {
        let asset_id = session.resolve_asset(&id).cloned().ok_or(sourcerer_core::Error::UnknownEntity {
            kind: "asset",
            id: id.clone(),
        })?;
        Ok(SessionEvent::AssetDecision {
            asset_id,
            state: body.state,
        })
    })
    .await
}

async fn set_verdict(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> Response {
    let body: VerdictBody = match parse_body(&state, &body) {
        Ok(b) => b,
        Err(failure) => return failure.into_response(),
    };
    commit(&state, |_| {
        Ok(SessionEvent::FindingVerdict {
            finding_id: FindingId::from(id),
            verdict: body.verdict,
        })
    })
    .await
}
