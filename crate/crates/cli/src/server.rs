//! HTTP routes of the review task server.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use proofread_core::evalkit::PrPoint;
use proofread_core::taskserve::{encode_png, Axis, SliceResponse, TaskService};
use proofread_core::{CandidateId, Error, Verdict, Workflow};
use serde::{Deserialize, Serialize};

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

#[derive(Serialize)]
struct ErrorBody {
    code: &'static str,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::UnknownCandidate(_) | Error::UnknownFragment(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::InvalidArgument(_) | Error::OutOfRange(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            code: self.0.code(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(svc: Arc<TaskService>) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{id}/decision", post(decision))
        .route("/api/candidates/{id}/slices", get(slices))
        .route("/api/stats", get(stats))
        .route("/api/eval/pr", get(eval_pr))
        .with_state(svc)
}

#[derive(Deserialize)]
struct NextQuery {
    workflow: Option<String>,
    reviewer: Option<String>,
}

async fn next_task(State(svc): State<Arc<TaskService>>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let workflow: Workflow = match q.workflow.as_deref() {
        None | Some("") => Workflow::Focused,
        Some(w) => w.parse()?,
    };
    let reviewer = q.reviewer.unwrap_or_default();
    Ok(Json(svc.next_task(workflow, &reviewer)?).into_response())
}

#[derive(Deserialize)]
struct DecisionBody {
    verdict: String,
    reviewer: String,
}

fn parse_id(id: &str) -> std::result::Result<CandidateId, Error> {
    id.parse()
        .map_err(|_| Error::UnknownCandidate(id.to_string()))
}

async fn decision(
    State(svc): State<Arc<TaskService>>,
    Path(id): Path<String>,
    Json(body): Json<DecisionBody>,
) -> ApiResult<Response> {
    let id = parse_id(&id)?;
    let verdict: Verdict = body.verdict.parse()?;
    Ok(Json(svc.submit_decision(id, verdict, &body.reviewer)?).into_response())
}

#[derive(Deserialize)]
struct SliceQuery {
    axis: Option<String>,
    index: Option<u32>,
    /// `json` (default) or `png`.
    format: Option<String>,
}

async fn slices(
    State(svc): State<Arc<TaskService>>,
    Path(id): Path<String>,
    Query(q): Query<SliceQuery>,
) -> ApiResult<Response> {
    let id = parse_id(&id)?;
    let axis: Axis = q.axis.as_deref().unwrap_or("z").parse()?;
    let slice = tokio::task::spawn_blocking(move || {
        let t = svc.evidence(id)?;
        let index = q.index.unwrap_or(t.edge() / 2);
        proofread_core::taskserve::slice_tensor(id, &t, axis, index)
    })
    .await
    .map_err(|e| Error::InvalidArgument(format!("slice task failed: {e}")))??;
    match q.format.as_deref() {
        Some("png") => Ok(([(header::CONTENT_TYPE, "image/png")], encode_png(&slice)?).into_response()),
        None | Some("json") => Ok(Json(SliceResponse::new(&slice)?).into_response()),
        Some(other) => Err(Error::InvalidArgument(format!("unknown format {other:?}")).into()),
    }
}

async fn stats(State(svc): State<Arc<TaskService>>) -> Json<proofread_core::taskserve::Stats> {
    Json(svc.stats())
}

#[derive(Serialize, Deserialize)]
pub struct PrResponse {
    pub available: bool,
    pub auprc: Option<f64>,
    pub points: Vec<PrPoint>,
}

async fn eval_pr(State(svc): State<Arc<TaskService>>) -> Json<PrResponse> {
    Json(match svc.pr_curve() {
        Some(c) => PrResponse {
            available: true,
            auprc: Some(c.auprc),
            points: c.points.clone(),
        },
        None => PrResponse {
            available: false,
            auprc: None,
            points: Vec::new(),
        },
    })
}
