//! HTTP surface of the episode service, plus a server-sent event stream per
//! episode for oversight consoles.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

use super::{EpisodeConfig, EpisodeEvent, EpisodeService, ServiceError, Verdict};
use crate::action::parse_action;

/// Uniform error body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::CapacityExhausted(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::ProvisionFailed(_) | ServiceError::ResetFailed(_) => StatusCode::BAD_GATEWAY,
            ServiceError::EpisodeNotActive(_)
            | ServiceError::PendingActionExists(_)
            | ServiceError::NoPendingAction => StatusCode::CONFLICT,
            ServiceError::Validation(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::AwaitingApproval(_) => StatusCode::ACCEPTED,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
        }
    }

    pub fn envelope(&self) -> ErrorEnvelope {
        let detail = match self {
            ServiceError::Validation(v) => serde_json::to_value(v).ok(),
            ServiceError::AwaitingApproval(p) | ServiceError::PendingActionExists(p) => serde_json::to_value(p).ok(),
            _ => None,
        };
        ErrorEnvelope { code: self.code().into(), message: self.to_string(), detail }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.envelope())).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

fn body<T: serde::de::DeserializeOwned>(raw: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(raw).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

#[derive(Debug, Deserialize)]
struct ApprovalBody {
    verdict: Verdict,
}

#[derive(Debug, Deserialize)]
struct TrajectoryQuery {
    epoch: Option<u32>,
}

pub fn router(svc: Arc<EpisodeService>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { Json(serde_json::json!({"status": "ok"})) }))
        .route("/episodes", get(list).post(create))
        .route("/episodes/{id}", get(info).delete(close))
        .route("/episodes/{id}/step", post(step))
        .route("/episodes/{id}/approval", post(approval))
        .route("/episodes/{id}/reset", post(reset))
        .route("/episodes/{id}/trajectory", get(trajectory))
        .route("/episodes/{id}/events", get(events))
        .fallback(|| async { ServiceError::NotFound("no such route".into()) })
        .with_state(svc)
}

async fn list(State(svc): State<Arc<EpisodeService>>) -> impl IntoResponse {
    Json(svc.list().await)
}

async fn create(State(svc): State<Arc<EpisodeService>>, raw: Bytes) -> Result<Response, ServiceError> {
    let cfg: EpisodeConfig = body(&raw)?;
    let start = svc.create_episode(cfg).await?;
    Ok((StatusCode::CREATED, Json(start)).into_response())
}

async fn info(State(svc): State<Arc<EpisodeService>>, Path(id): Path<String>) -> ApiResult<super::EpisodeInfo> {
    Ok(Json(svc.info(&id).await?))
}

async fn close(State(svc): State<Arc<EpisodeService>>, Path(id): Path<String>) -> ApiResult<super::EpisodeInfo> {
    Ok(Json(svc.close_episode(&id).await?))
}

async fn step(
    State(svc): State<Arc<EpisodeService>>,
    Path(id): Path<String>,
    raw: Bytes,
) -> ApiResult<crate::driver::StepOutcome> {
    let text = std::str::from_utf8(&raw).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let action = parse_action(text).map_err(ServiceError::Validation)?;
    Ok(Json(svc.step(&id, action).await?))
}

async fn approval(
    State(svc): State<Arc<EpisodeService>>,
    Path(id): Path<String>,
    raw: Bytes,
) -> ApiResult<crate::driver::StepOutcome> {
    let b: ApprovalBody = body(&raw)?;
    Ok(Json(svc.approve_pending(&id, b.verdict).await?))
}

async fn reset(State(svc): State<Arc<EpisodeService>>, Path(id): Path<String>) -> ApiResult<super::EpisodeStart> {
    Ok(Json(svc.reset_episode(&id).await?))
}

async fn trajectory(
    State(svc): State<Arc<EpisodeService>>,
    Path(id): Path<String>,
    Query(q): Query<TrajectoryQuery>,
) -> Result<Response, ServiceError> {
    let t = svc.get_trajectory(&id, q.epoch).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], t.to_jsonl()).into_response())
}

fn sse_event(e: &EpisodeEvent) -> Event {
    Event::default().event(e.name()).data(serde_json::to_string(e).expect("event serializes"))
}

struct Feed {
    backlog: Option<EpisodeEvent>,
    rx: broadcast::Receiver<EpisodeEvent>,
    done: bool,
}

/// Events for one episode; a pending action is replayed on connect, and the
/// stream ends after `closed`.
pub fn event_stream(
    backlog: Option<EpisodeEvent>,
    rx: broadcast::Receiver<EpisodeEvent>,
) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold(Feed { backlog, rx, done: false }, |mut f| async move {
        if f.done {
            return None;
        }
        if let Some(e) = f.backlog.take() {
            return Some((Ok(sse_event(&e)), f));
        }
        match f.rx.recv().await {
            Ok(e) => {
                f.done = matches!(e, EpisodeEvent::Closed { .. });
                Some((Ok(sse_event(&e)), f))
            }
            Err(broadcast::error::RecvError::Lagged(n)) => {
                Some((Ok(Event::default().event("lagged").data(n.to_string())), f))
            }
            Err(broadcast::error::RecvError::Closed) => None,
        }
    })
}

async fn events(State(svc): State<Arc<EpisodeService>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let rx = svc.subscribe(&id)?;
    let info = svc.info(&id).await?;
    let backlog = if info.closed {
        Some(EpisodeEvent::Closed { episode_id: id })
    } else {
        info.pending_action.map(EpisodeEvent::PendingAction)
    };
    let stream = event_stream(backlog, rx);
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))).into_response())
}
