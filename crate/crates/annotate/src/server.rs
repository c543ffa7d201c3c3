use std::collections::HashMap;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mad_core::choices::Side;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::{AnnotateError, Session};

impl AnnotateError {
    fn status(&self) -> StatusCode {
        match self {
            AnnotateError::UnknownTrial(_) | AnnotateError::NotFound(_) => StatusCode::NOT_FOUND,
            AnnotateError::Conflict { .. } | AnnotateError::EmptyLog => StatusCode::CONFLICT,
            AnnotateError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            AnnotateError::UnknownTrial(_) => "unknown_trial",
            AnnotateError::NotFound(_) => "not_found",
            AnnotateError::Conflict { .. } => "conflict",
            AnnotateError::BadRequest(_) => "bad_request",
            AnnotateError::EmptyLog => "empty_log",
            _ => "internal",
        }
    }
}

impl IntoResponse for AnnotateError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code(), "detail": self.to_string() });
        if let AnnotateError::Conflict { trial_id, chosen_side } = &self {
            body["trial_id"] = json!(trial_id);
            body["chosen_side"] = json!(chosen_side);
        }
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        (self.status(), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, AnnotateError>;

#[derive(Deserialize)]
struct ChoiceBody {
    trial_id: String,
    side: Side,
    rater: String,
}

/// The HTTP API of a session.
pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/api/session", get(session_summary))
        .route("/api/trial/next", get(next_trial))
        .route("/api/choice", post(submit_choice))
        .route("/api/export", get(export))
        .route("/assets/image/{image_id}", get(image))
        .route("/assets/pred/{side}/{trial_id}", get(prediction))
        .fallback(|| async { AnnotateError::NotFound("route".into()) })
        .with_state(session)
}

/// Serves `session` on `listener` until `shutdown` resolves.
pub async fn serve<F>(session: Arc<Session>, listener: TcpListener, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(session))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn session_summary(State(s): State<Arc<Session>>) -> impl IntoResponse {
    Json(s.summary())
}

async fn next_trial(State(s): State<Arc<Session>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let rater = q
        .get("rater")
        .ok_or_else(|| AnnotateError::BadRequest("missing `rater` query parameter".into()))?;
    Ok(Json(s.next_trial(rater)?).into_response())
}

async fn submit_choice(State(s): State<Arc<Session>>, body: Bytes) -> ApiResult<Response> {
    let c: ChoiceBody =
        serde_json::from_slice(&body).map_err(|e| AnnotateError::BadRequest(format!("choice body: {e}")))?;
    // the append blocks on fsync
    let ack = tokio::task::spawn_blocking(move || s.submit(&c.trial_id, c.side, &c.rater))
        .await
        .map_err(|e| AnnotateError::Io(std::io::Error::other(e)))??;
    Ok(Json(ack).into_response())
}

async fn export(State(s): State<Arc<Session>>) -> ApiResult<Response> {
    Ok(Json(s.export()?).into_response())
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn image(State(s): State<Arc<Session>>, Path(image_id): Path<String>) -> ApiResult<Response> {
    Ok(png(s.image_png(&image_id)?))
}

async fn prediction(
    State(s): State<Arc<Session>>,
    Path((side, trial_id)): Path<(String, String)>,
) -> ApiResult<Response> {
    let side = match side.as_str() {
        "left" => Side::Left,
        "right" => Side::Right,
        _ => return Err(AnnotateError::NotFound(format!("side `{side}`"))),
    };
    Ok(png(s.prediction_png(side, &trial_id)?))
}
