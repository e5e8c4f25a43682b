//! JSON-over-HTTP front end for [`EvalService`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::record::{Validation, Verdict};
use super::service::{ArmStats, EvalService, OnboardingPrompt, OnboardingResult, SessionStart, SubmitOutcome, ValidationItem};
use crate::error::Error;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::InvalidArgument(_) | Error::SpanMismatch { .. } | Error::Shape(_) | Error::Empty(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::NotFound(_) | Error::UnknownPassage(_) => StatusCode::NOT_FOUND,
            Error::State(_) | Error::Rejected(_) => StatusCode::CONFLICT,
            Error::Backend { .. } => StatusCode::GATEWAY_TIMEOUT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.0.to_string() })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs blocking service work off the async executor.
async fn blocking<T, F>(svc: Arc<EvalService>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&EvalService) -> crate::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError(Error::backend("worker", e)))?
        .map(Json)
        .map_err(ApiError)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NewSession {
    pub annotator_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuestionRequest {
    pub question: String,
    pub answer_start: usize,
    pub answer_end: usize,
    /// Client-side timing; informational, the server clock is authoritative.
    #[serde(default)]
    pub elapsed_seconds: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpanAnswer {
    pub answer_start: usize,
    pub answer_end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OnboardingRequest {
    pub answers: Vec<SpanAnswer>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub verdict: Verdict,
    pub validator_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub record_id: String,
    pub arm_token: String,
    pub validation: Validation,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub questions_in_session: usize,
    pub lifetime_questions: usize,
    pub onboarding_passed: bool,
}

async fn new_session(State(svc): State<Arc<EvalService>>, Json(req): Json<NewSession>) -> ApiResult<SessionStart> {
    blocking(svc, move |s| s.start_session(&req.annotator_id)).await
}

async fn session_status(State(svc): State<Arc<EvalService>>, Path(id): Path<String>) -> ApiResult<SessionStatus> {
    blocking(svc, move |s| {
        let sess = s.session(&id)?;
        Ok(SessionStatus {
            session_id: sess.session_id,
            questions_in_session: sess.questions_in_session,
            lifetime_questions: sess.lifetime_questions,
            onboarding_passed: sess.onboarding_passed,
        })
    })
    .await
}

async fn ask(
    State(svc): State<Arc<EvalService>>,
    Path(id): Path<String>,
    Json(req): Json<QuestionRequest>,
) -> ApiResult<SubmitOutcome> {
    blocking(svc, move |s| s.submit_question(&id, &req.question, req.answer_start, req.answer_end)).await
}

async fn onboarding(State(svc): State<Arc<EvalService>>) -> Json<Vec<OnboardingPrompt>> {
    Json(svc.onboarding_script())
}

async fn submit_onboarding(
    State(svc): State<Arc<EvalService>>,
    Path(id): Path<String>,
    Json(req): Json<OnboardingRequest>,
) -> ApiResult<OnboardingResult> {
    let spans: Vec<(usize, usize)> = req.answers.iter().map(|a| (a.answer_start, a.answer_end)).collect();
    blocking(svc, move |s| s.submit_onboarding(&id, &spans)).await
}

async fn validate(
    State(svc): State<Arc<EvalService>>,
    Path(id): Path<String>,
    Json(req): Json<ValidateRequest>,
) -> ApiResult<ValidateResponse> {
    blocking(svc, move |s| {
        let r = s.validate_record(&id, req.verdict, &req.validator_id)?;
        Ok(ValidateResponse {
            arm_token: s.token_for(&r.arm),
            record_id: r.record_id,
            validation: r.validation,
        })
    })
    .await
}

async fn queue(State(svc): State<Arc<EvalService>>) -> Json<Vec<ValidationItem>> {
    Json(svc.validation_queue())
}

async fn stats(State(svc): State<Arc<EvalService>>, Path(token): Path<String>) -> ApiResult<ArmStats> {
    blocking(svc, move |s| {
        let arm = s.arm_for_token(&token)?.to_string();
        s.export_stats(&arm)
    })
    .await
}

pub fn router(svc: Arc<EvalService>) -> Router {
    Router::new()
        .route("/session", post(new_session))
        .route("/session/{id}", get(session_status))
        .route("/session/{id}/question", post(ask))
        .route("/session/{id}/onboarding", post(submit_onboarding))
        .route("/onboarding", get(onboarding))
        .route("/records/{id}/validate", post(validate))
        .route("/validation/queue", get(queue))
        .route("/arms/{token}/stats", get(stats))
        .with_state(svc)
}

pub async fn serve(svc: Arc<EvalService>, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("eval service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(svc)).await?;
    Ok(())
}
