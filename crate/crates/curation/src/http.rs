//! HTTP+JSON routes over [`CurationService`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::service::{CurationService, ServiceError};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) | ServiceError::UnknownCheckpoint(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NoCheckpoint => StatusCode::PRECONDITION_FAILED,
            ServiceError::Backend(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut error = json!({ "code": self.code(), "message": self.to_string() });
        if let ServiceError::Conflict {
            current,
            current_description,
            ..
        } = &self
        {
            error["current_revision"] = json!(current);
            error["current_description"] = json!(current_description);
        }
        (status, Json(json!({ "error": error }))).into_response()
    }
}

fn bad_request(message: String) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": { "code": "bad_request", "message": message } })),
    )
        .into_response()
}

type Shared = Arc<CurationService>;

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

/// Parses an optional JSON body; an empty body yields `T::default()`.
fn body<T: for<'de> Deserialize<'de> + Default>(bytes: &Bytes) -> Result<T, Box<Response>> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| Box::new(bad_request(format!("invalid JSON body: {e}"))))
}

async fn list_pets(State(svc): State<Shared>) -> Response {
    match svc.list_pets() {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_pet(State(svc): State<Shared>, Path(id): Path<String>) -> Response {
    match svc.get_pet(&id) {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Default, Deserialize)]
struct PutBody {
    description: Option<String>,
    expected_revision: Option<u64>,
    author: Option<String>,
}

async fn put_pet(State(svc): State<Shared>, Path(id): Path<String>, bytes: Bytes) -> Response {
    let req: PutBody = match body(&bytes) {
        Ok(b) => b,
        Err(r) => return *r,
    };
    let (Some(description), Some(expected)) = (req.description, req.expected_revision) else {
        return bad_request("body needs `description` and `expected_revision`".into());
    };
    let author = req.author.unwrap_or_else(|| "curator".into());
    match svc.put_description(&id, &description, expected, &author) {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Default, Deserialize)]
struct PreviewBody {
    description: Option<String>,
}

async fn preview(State(svc): State<Shared>, Path(id): Path<String>, bytes: Bytes) -> Response {
    let req: PreviewBody = match body(&bytes) {
        Ok(b) => b,
        Err(r) => return *r,
    };
    match blocking(move || svc.preview_imagery(&id, req.description.as_deref())).await {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Default, Deserialize)]
struct RescoreBody {
    draft: Option<String>,
    checkpoint_id: Option<String>,
}

async fn rescore(State(svc): State<Shared>, Path(id): Path<String>, bytes: Bytes) -> Response {
    let req: RescoreBody = match body(&bytes) {
        Ok(b) => b,
        Err(r) => return *r,
    };
    let Some(draft) = req.draft else {
        return bad_request("body needs `draft`".into());
    };
    match blocking(move || svc.rescore(&id, &draft, req.checkpoint_id.as_deref())).await {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct ExamplesQuery {
    pet: String,
}

async fn examples(State(svc): State<Shared>, Query(q): Query<ExamplesQuery>) -> Response {
    match svc.examples_for(&q.pet) {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn checkpoints(State(svc): State<Shared>) -> Response {
    Json(svc.checkpoint_ids()).into_response()
}

pub fn router(service: Arc<CurationService>) -> Router {
    let mut router = Router::new()
        .route("/pets", get(list_pets))
        .route("/pets/{id}", get(get_pet).put(put_pet))
        .route("/pets/{id}/imagery", post(preview))
        .route("/pets/{id}/rescore", post(rescore))
        .route("/examples", get(examples))
        .route("/checkpoints", get(checkpoints));
    if let Some(dir) = service.sheets_dir() {
        router = router.nest_service("/sheets", ServeDir::new(dir));
    }
    router.with_state(service)
}

pub async fn serve(service: Arc<CurationService>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("curation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
