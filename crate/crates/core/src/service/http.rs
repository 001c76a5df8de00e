//! HTTP binding of [`Service`]. Handlers hand the blocking work to the
//! blocking thread pool.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{ApiError, ErrorCode, EvalRequest, Service};
use crate::eval::{render_report, ReportFormat};
use crate::feedback::{NewFeedback, NewVersion};
use crate::scenario::ScenarioId;

/// Request bodies above this size are rejected before parsing.
pub const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Shared = State<Arc<Service>>;

async fn blocking<T, F>(svc: Arc<Service>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?
}

#[derive(Debug, Default, Deserialize)]
struct CreateSession {
    #[serde(default)]
    scenario_hint: Option<ScenarioId>,
}

#[derive(Debug, Deserialize)]
struct JsonMessage {
    text: String,
    /// Base64-encoded image bytes.
    #[serde(default)]
    image_base64: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Activate {
    #[serde(default)]
    expected_active: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    #[serde(default)]
    format: Option<String>,
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
}

async fn healthz() -> Json<Health> {
    Json(Health { status: "ok" })
}

async fn create_session(State(svc): Shared, body: Option<Json<CreateSession>>) -> Result<Response, ApiError> {
    let hint = body.map(|Json(b)| b.scenario_hint).unwrap_or_default();
    let view = blocking(svc, move |s| s.create_session(hint)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn read_message(req: Request) -> Result<(String, Option<Vec<u8>>), ApiError> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string();
    if content_type.starts_with("multipart/form-data") {
        let mut form = Multipart::from_request(req, &()).await.map_err(|e| ApiError::invalid(e.body_text()))?;
        let (mut text, mut image) = (None, None);
        while let Some(field) = form.next_field().await.map_err(|e| ApiError::invalid(e.body_text()))? {
            match field.name() {
                Some("text") => text = Some(field.text().await.map_err(|e| ApiError::invalid(e.body_text()))?),
                Some("image") => image = Some(field.bytes().await.map_err(|e| ApiError::invalid(e.body_text()))?.to_vec()),
                _ => {}
            }
        }
        Ok((text.unwrap_or_default(), image))
    } else {
        let Json(m) = Json::<JsonMessage>::from_request(req, &()).await.map_err(|e| ApiError::invalid(e.body_text()))?;
        let image = match m.image_base64 {
            Some(b) => Some(
                base64::engine::general_purpose::STANDARD
                    .decode(b.trim())
                    .map_err(|e| ApiError::invalid(format!("image_base64: {e}")))?,
            ),
            None => None,
        };
        Ok((m.text, image))
    }
}

async fn post_message(State(svc): Shared, Path(id): Path<String>, req: Request) -> Result<Response, ApiError> {
    let (text, image) = read_message(req).await?;
    let resp = blocking(svc, move |s| s.post_message(&id, &text, image)).await?;
    Ok(Json(resp).into_response())
}

async fn get_session(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(blocking(svc, move |s| s.get_session(&id)).await?).into_response())
}

async fn get_events(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(blocking(svc, move |s| s.events(&id)).await?).into_response())
}

async fn start_eval(State(svc): Shared, Json(req): Json<EvalRequest>) -> Result<Response, ApiError> {
    let summary = blocking(svc, move |s| s.run_eval(req)).await?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn eval_report(State(svc): Shared, Path(id): Path<String>, Query(q): Query<ReportQuery>) -> Result<Response, ApiError> {
    let format = match q.format.as_deref() {
        None => ReportFormat::Json,
        Some(f) => f.parse().map_err(ApiError::invalid)?,
    };
    let report = blocking(svc, move |s| s.eval_report(&id)).await?;
    let body = render_report(&report, format)?;
    let content_type = match format {
        ReportFormat::Csv => "text/csv; charset=utf-8",
        _ => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

async fn post_feedback(State(svc): Shared, Json(new): Json<NewFeedback>) -> Result<Response, ApiError> {
    let rec = blocking(svc, move |s| s.record_feedback(new)).await?;
    Ok((StatusCode::CREATED, Json(rec)).into_response())
}

async fn list_feedback(State(svc): Shared) -> Result<Response, ApiError> {
    Ok(Json(blocking(svc, |s| Ok(s.feedback())).await?).into_response())
}

async fn list_versions(State(svc): Shared) -> Result<Response, ApiError> {
    Ok(Json(blocking(svc, |s| Ok(s.versions())).await?).into_response())
}

async fn publish_version(State(svc): Shared, Json(new): Json<NewVersion>) -> Result<Response, ApiError> {
    let v = blocking(svc, move |s| s.publish_version(new)).await?;
    Ok((StatusCode::CREATED, Json(v)).into_response())
}

async fn activate_version(
    State(svc): Shared,
    Path(id): Path<String>,
    body: Option<Json<Activate>>,
) -> Result<Response, ApiError> {
    let expected = body.and_then(|Json(a)| a.expected_active);
    let v = blocking(svc, move |s| s.activate_version(&id, expected.as_deref())).await?;
    Ok(Json(v).into_response())
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/:id", get(get_session))
        .route("/v1/sessions/:id/messages", post(post_message))
        .route("/v1/sessions/:id/events", get(get_events))
        .route("/v1/eval/runs", post(start_eval))
        .route("/v1/eval/runs/:id/report", get(eval_report))
        .route("/v1/feedback", post(post_feedback).get(list_feedback))
        .route("/v1/instructions/versions", get(list_versions).post(publish_version))
        .route("/v1/instructions/versions/:id/activate", post(activate_version))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(svc)
}

/// Serves until Ctrl-C.
pub async fn serve(svc: Arc<Service>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
