use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use carom_core::scene::{SceneService, ServiceError, WhatIfEdit, DEFAULT_SESSION};
use serde::{Deserialize, Serialize};

type Shared = Arc<SceneService>;

struct ApiError(ServiceError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status).unwrap_or(StatusCode::BAD_REQUEST);
        (status, Json(self.0)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

fn bad_request(msg: impl ToString) -> ApiError {
    ApiError(ServiceError {
        status: 400,
        error: msg.to_string(),
    })
}

#[derive(Deserialize)]
struct FrameQuery {
    t: f64,
    session: Option<String>,
}

#[derive(Deserialize)]
struct SessionQuery {
    session: Option<String>,
}

#[derive(Serialize)]
struct Cleared {
    cleared: bool,
}

fn session(s: &Option<String>) -> &str {
    s.as_deref().unwrap_or(DEFAULT_SESSION)
}

async fn scene_info(State(svc): State<Shared>) -> impl IntoResponse {
    Json(svc.info())
}

async fn frame(State(svc): State<Shared>, q: Result<Query<FrameQuery>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(q) = q.map_err(bad_request)?;
    Ok(Json(svc.frame(q.t, session(&q.session))?).into_response())
}

async fn tracks(State(svc): State<Shared>) -> impl IntoResponse {
    Json(svc.tracks())
}

async fn shape(State(svc): State<Shared>, id: Result<Path<u32>, PathRejection>) -> Result<Response, ApiError> {
    let Path(id) = id.map_err(bad_request)?;
    Ok(Json(svc.shape(id)?).into_response())
}

async fn apply_edit(
    State(svc): State<Shared>,
    Query(q): Query<SessionQuery>,
    body: Result<Json<WhatIfEdit>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(edit) = body.map_err(bad_request)?;
    Ok(Json(svc.apply_edit(session(&q.session), edit)?).into_response())
}

async fn clear_edit(State(svc): State<Shared>, Query(q): Query<SessionQuery>) -> impl IntoResponse {
    Json(Cleared {
        cleared: svc.clear_edit(session(&q.session)),
    })
}

/// Scene endpoints; every body is the JSON of the matching service call.
pub fn router(svc: Shared) -> Router {
    Router::new()
        .route("/scene", get(scene_info))
        .route("/frame", get(frame))
        .route("/tracks", get(tracks))
        .route("/shape/{id}", get(shape))
        .route("/edit", axum::routing::post(apply_edit).delete(clear_edit))
        .with_state(svc)
}
