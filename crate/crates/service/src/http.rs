//! HTTP routes.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tracing::{error, info};

use crate::models::{Catalog, Fingerprints};
use crate::session::{Report, ServiceError, SessionService, SessionView, YesNo};

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub reports: Vec<Report>,
}

#[derive(Debug, Deserialize)]
pub struct AnswerRequest {
    pub answer: YesNo,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionList {
    pub sessions: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub fingerprints: Fingerprints,
    pub max_turns: usize,
    pub catalog: &'static str,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownSymptom(_) | ServiceError::BadRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Model(dxagent::Error::Usage(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Store(_) | ServiceError::Model(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            error!(error = %self, "request failed");
        }
        let mut body = json!({ "error": self.to_string() });
        if let ServiceError::UnknownSymptom(id) = &self {
            body["symptom"] = json!(id);
        }
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<SessionService>;

/// Model work runs off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ServiceError::BadRequest(format!("request aborted: {e}"))))
}

async fn create(State(svc): State<Shared>, Json(req): Json<CreateRequest>) -> Result<(StatusCode, Json<SessionView>), ServiceError> {
    let view = blocking(move || svc.create(req.reports)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn answer(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<AnswerRequest>,
) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(blocking(move || svc.answer(&id, req.answer)).await?))
}

async fn fetch(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(blocking(move || svc.get(&id)).await?))
}

async fn remove(State(svc): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, ServiceError> {
    blocking(move || svc.delete(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list(State(svc): State<Shared>) -> Result<Json<SessionList>, ServiceError> {
    let sessions = blocking(move || svc.list()).await?;
    Ok(Json(SessionList { sessions }))
}

async fn health(State(svc): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok",
        fingerprints: svc.models().fingerprints(),
        max_turns: svc.models().max_turns,
        catalog: "/catalog",
    })
}

async fn catalog(State(svc): State<Shared>) -> Json<Catalog> {
    Json(svc.models().catalog())
}

pub fn router(service: Arc<SessionService>) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/:id", get(fetch).delete(remove))
        .route("/sessions/:id/answer", post(answer))
        .route("/health", get(health))
        .route("/catalog", get(catalog))
        .with_state(service)
}

/// Binds `addr` and serves until the process receives Ctrl-C.
pub async fn serve(addr: SocketAddr, service: Arc<SessionService>) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
