//! HTTP API for the extrapolation and ranking study.
//!
//! Endpoints:
//! - `GET /api/health`
//! - `GET /api/study/{participant_id}/next`
//! - `GET /api/stimuli/{id}`
//! - `POST /api/responses`
//! - `GET /api/occam/{task_id}?participant_id=`
//! - `POST /api/rankings`
//! - `GET /api/export/{responses|rankings}`
//!
//! Errors are JSON `{ "error": message, "field": name? }` with status 400
//! (validation), 404 (unknown id), 409 (shuffle token mismatch) or 500.

pub mod demo;
pub mod shuffle;
pub mod store;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio_util::io::ReaderStream;

use humankernel::responses::{Plausibility, RankingRecord, ResponseRecord};
use humankernel::Error;

pub use store::{ExportKind, SharedStore, StudyDefinition, StudyItem, StudyStore};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub field: Option<String>,
    pub message: String,
}

impl ApiError {
    fn bad_request(field: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            field: Some(field.into()),
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            field: None,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation { field, message } => Self::bad_request(&field, message),
            Error::InvalidArgument(m) => Self {
                status: StatusCode::BAD_REQUEST,
                field: None,
                message: m,
            },
            other => Self {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                field: None,
                message: other.to_string(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses a JSON body, naming the offending top-level field on failure.
fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner().to_string();
        let path = e.path().to_string();
        let field = if path == "." || path.is_empty() {
            missing_field(&inner).unwrap_or("body").to_string()
        } else {
            path.split(['.', '[']).next().unwrap_or("body").to_string()
        };
        ApiError::bad_request(&field, inner)
    })
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

fn require_nonempty(field: &str, value: &str) -> ApiResult<()> {
    if value.trim().is_empty() {
        return Err(ApiError::bad_request(field, "must not be empty"));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
pub struct ResponseSubmission {
    pub participant_id: String,
    pub stimulus_id: String,
    pub y_star: Vec<f64>,
    pub response_time_s: f64,
}

#[derive(Debug, Deserialize)]
pub struct RankingSubmission {
    pub participant_id: String,
    pub task_id: String,
    pub shuffle_token: String,
    /// On-screen positions (1-based), best fit first.
    pub order: Vec<u8>,
    #[serde(default)]
    pub plausibility_answer: Option<Plausibility>,
}

#[derive(Debug, Serialize)]
pub struct Candidate {
    pub position: usize,
    pub curve: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct OccamView {
    pub task_id: String,
    pub participant_id: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub display_x: Vec<f64>,
    pub candidates: Vec<Candidate>,
    pub shuffle_token: String,
}

#[derive(Debug, Deserialize)]
struct ParticipantQuery {
    participant_id: Option<String>,
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn next_item(State(store): State<SharedStore>, UrlPath(pid): UrlPath<String>) -> ApiResult<Json<serde_json::Value>> {
    require_nonempty("participant_id", &pid)?;
    Ok(Json(match store.next_item(&pid) {
        None => json!({ "done": true }),
        Some(StudyItem::Stimulus { id }) => json!({ "done": false, "kind": "stimulus", "id": id }),
        Some(StudyItem::Ranking { id }) => json!({ "done": false, "kind": "ranking", "id": id }),
    }))
}

async fn get_stimulus(State(store): State<SharedStore>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let s = store
        .stimulus(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown stimulus {id}")))?;
    Ok(Json(s).into_response())
}

async fn post_response(State(store): State<SharedStore>, body: Bytes) -> ApiResult<(StatusCode, Json<ResponseRecord>)> {
    let sub: ResponseSubmission = parse_body(&body)?;
    require_nonempty("participant_id", &sub.participant_id)?;
    if store.stimulus(&sub.stimulus_id).is_none() {
        return Err(ApiError::not_found(format!("unknown stimulus {}", sub.stimulus_id)));
    }
    let record = ResponseRecord {
        participant_id: sub.participant_id,
        stimulus_id: sub.stimulus_id,
        y_star: sub.y_star,
        response_time_s: sub.response_time_s,
        submitted_at: Utc::now(),
    };
    store.add_response(record.clone()).await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn get_occam(
    State(store): State<SharedStore>,
    UrlPath(task_id): UrlPath<String>,
    Query(q): Query<ParticipantQuery>,
) -> ApiResult<Json<OccamView>> {
    let pid = q.participant_id.unwrap_or_default();
    require_nonempty("participant_id", &pid)?;
    let task = store
        .task(&task_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown task {task_id}")))?;
    let p = shuffle::presentation(store.study().seed, &pid, &task_id);
    let candidates = p
        .slots
        .iter()
        .enumerate()
        .map(|(i, &label)| Candidate {
            position: i + 1,
            curve: task.candidate_curves[label as usize - 1].clone(),
        })
        .collect();
    Ok(Json(OccamView {
        task_id,
        participant_id: pid,
        x: task.dataset_x.clone(),
        y: task.dataset_y.clone(),
        display_x: task.display_x.clone(),
        candidates,
        shuffle_token: p.token,
    }))
}

async fn post_ranking(State(store): State<SharedStore>, body: Bytes) -> ApiResult<(StatusCode, Json<RankingRecord>)> {
    let sub: RankingSubmission = parse_body(&body)?;
    require_nonempty("participant_id", &sub.participant_id)?;
    if store.task(&sub.task_id).is_none() {
        return Err(ApiError::not_found(format!("unknown task {}", sub.task_id)));
    }
    let p = shuffle::presentation(store.study().seed, &sub.participant_id, &sub.task_id);
    if sub.shuffle_token != p.token {
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            field: Some("shuffle_token".into()),
            message: "shuffle token does not match this participant and task".into(),
        });
    }
    let order = p
        .deshuffle(&sub.order)
        .ok_or_else(|| ApiError::bad_request("order", "must be a permutation of positions 1..=7"))?;
    let record = RankingRecord {
        participant_id: sub.participant_id,
        task_id: sub.task_id,
        order,
        plausibility_answer: sub.plausibility_answer,
    };
    store.add_ranking(record.clone()).await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn export(State(store): State<SharedStore>, UrlPath(kind): UrlPath<String>) -> ApiResult<Response> {
    let kind = match kind.as_str() {
        "responses" => ExportKind::Responses,
        "rankings" => ExportKind::Rankings,
        other => return Err(ApiError::not_found(format!("unknown export {other}"))),
    };
    let reader = store.export_reader(kind).await?;
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(ReaderStream::new(reader)),
    )
        .into_response())
}

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/study/{participant_id}/next", get(next_item))
        .route("/api/stimuli/{id}", get(get_stimulus))
        .route("/api/responses", post(post_response))
        .route("/api/occam/{task_id}", get(get_occam))
        .route("/api/rankings", post(post_ranking))
        .route("/api/export/{kind}", get(export))
        .with_state(store)
}

/// Opens the store at `root` and serves until the process is stopped.
pub async fn serve(bind: SocketAddr, root: &Path) -> humankernel::Result<()> {
    let store = Arc::new(StudyStore::open(root)?);
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| Error::io(root, e))?;
    axum::serve(listener, router(store))
        .await
        .map_err(|e| Error::io(root, e))
}
