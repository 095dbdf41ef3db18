//! HTTP routes over a shared [`Engine`].

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use quill_core::introgen::{ChainStage, IntroEnv};
use quill_core::recommend::RecommendError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::Engine;
use crate::errors::classify;
use crate::service::{self, IntroFailure, IntroRequest, SuggestRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub index_count: usize,
    pub corpus_count: usize,
    pub dimension: usize,
    pub metric: String,
}

/// JSON error body: `{"error": {"class", "message", "stage"?}, ...extra}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, class: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({"error": {"class": class, "message": message.into()}}),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        if key == "stage" {
            self.body["error"]["stage"] = value;
        } else {
            self.body[key] = value;
        }
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

fn internal(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

fn recommend_error(e: RecommendError) -> ApiError {
    let class = classify(&e);
    let status = match &e {
        RecommendError::Input(_) => StatusCode::BAD_REQUEST,
        RecommendError::Template(_) | RecommendError::Index { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_GATEWAY,
    };
    let stage = e.stage();
    let mut err = ApiError::new(status, class, e.to_string());
    if let Some(s) = stage {
        err = err.with("stage", json!(s));
    }
    err
}

fn intro_error(e: IntroFailure) -> ApiError {
    match e {
        IntroFailure::Input(m) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", m),
        IntroFailure::Chain(c) => {
            let status = if c.provider.is_some() {
                StatusCode::BAD_GATEWAY
            } else {
                StatusCode::UNPROCESSABLE_ENTITY
            };
            let mut err = ApiError::new(status, classify(&c), c.to_string())
                .with("stage", json!(c.stage))
                .with("trace", json!(*c.partial));
            if c.stage == ChainStage::Resolve {
                err = err.with("resolution", json!(c.partial.resolution));
            }
            err
        }
    }
}

async fn suggest(
    State(engine): State<Arc<Engine>>,
    body: Result<Json<SuggestRequest>, JsonRejection>,
) -> Result<Json<service::SuggestResponse>, ApiError> {
    let Json(req) = body?;
    let started = std::time::Instant::now();
    let out = tokio::task::spawn_blocking(move || service::suggest(&engine, &req))
        .await
        .map_err(internal)?;
    match out {
        Ok(resp) => {
            tracing::info!(suggestions = resp.suggestions.len(), ms = started.elapsed().as_millis() as u64, "suggest");
            Ok(Json(resp))
        }
        Err(e) => {
            tracing::warn!(error = %e, "suggest failed");
            Err(recommend_error(e))
        }
    }
}

async fn intro(
    State(engine): State<Arc<Engine>>,
    body: Result<Json<IntroRequest>, JsonRejection>,
) -> Result<Json<service::IntroResponse>, ApiError> {
    let Json(req) = body?;
    let out = tokio::task::spawn_blocking(move || {
        let env = IntroEnv {
            llm: &*engine.llm,
            embedder: &*engine.embedder,
            templates: &engine.templates,
        };
        service::intro(Some(engine.library.corpus()), &env, &engine.config, &req)
    })
    .await
    .map_err(internal)?;
    out.map(Json).map_err(|e| {
        tracing::warn!(error = %e, "intro failed");
        intro_error(e)
    })
}

async fn health(State(engine): State<Arc<Engine>>) -> Json<Health> {
    let index = engine.library.index();
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        index_count: index.len(),
        corpus_count: engine.library.corpus().len(),
        dimension: index.dimension(),
        metric: index.metric().to_string(),
    })
}

async fn work(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> Response {
    match engine.library.corpus().get(&id) {
        Some(w) => Json(w.clone()).into_response(),
        None => ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no work with id '{id}'")).into_response(),
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/suggest", post(suggest))
        .route("/intro", post(intro))
        .route("/health", get(health))
        .route("/works/{*id}", get(work))
        .with_state(engine)
}

/// Serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
