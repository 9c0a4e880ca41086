//! HTTP+JSON API. Every response is an envelope:
//! `{"ok": true, "data": ...}` or `{"ok": false, "error": {"code", "message"}}`.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use caseloop_core::bench::{CheckedVerdicts, EvalRecord};
use caseloop_core::parsers::{SystemDesign, UseCaseEdit};
use caseloop_core::session::{ManualFeedback, SessionConfig, SessionError};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ops::{Action, App, OpError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiErrorBody>,
}

impl ApiEnvelope {
    pub fn success(data: Value) -> Self {
        Self { ok: true, data: Some(data), error: None }
    }

    pub fn failure(code: &str, message: impl Into<String>) -> Self {
        Self { ok: false, data: None, error: Some(ApiErrorBody { code: code.into(), message: message.into() }) }
    }
}

struct ApiError(StatusCode, Box<ApiEnvelope>);

impl From<OpError> for ApiError {
    fn from(e: OpError) -> Self {
        let status = match &e {
            OpError::NotFound(_) | OpError::Session(SessionError::NotFound(_)) => StatusCode::NOT_FOUND,
            OpError::Session(SessionError::IllegalTransition { .. } | SessionError::SessionClosed(_)) => {
                StatusCode::CONFLICT
            }
            e if e.is_client_error() => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut message = e.to_string();
        if let Some(hint) = e.hint() {
            message = format!("{message} ({hint})");
        }
        ApiError(status, Box::new(ApiEnvelope::failure(e.code(), message)))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(*self.1)).into_response()
    }
}

type ApiResult = Result<Json<ApiEnvelope>, ApiError>;

fn ok<T: Serialize>(data: T) -> ApiResult {
    let value = serde_json::to_value(data).map_err(|e| ApiError::from(OpError::Io(e.to_string())))?;
    Ok(Json(ApiEnvelope::success(value)))
}

#[derive(Clone)]
struct Ctx {
    app: Arc<App>,
    token: Option<String>,
}

/// Runs blocking session work off the async executor.
async fn blocking<T, F>(ctx: &Ctx, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&App) -> Result<T, OpError> + Send + 'static,
{
    let app = ctx.app.clone();
    tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| ApiError::from(OpError::Io(format!("worker failed: {e}"))))?
        .map_err(ApiError::from)
}

async fn require_token(State(ctx): State<Ctx>, req: Request, next: Next) -> Response {
    if let Some(token) = &ctx.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return (
                StatusCode::UNAUTHORIZED,
                Json(ApiEnvelope::failure("Unauthorized", "missing or wrong bearer token")),
            )
                .into_response();
        }
    }
    next.run(req).await
}

/// The API router. `token`, when set, is required as a bearer token on
/// every request.
pub fn router(app: Arc<App>, token: Option<String>) -> Router {
    let ctx = Ctx { app, token };
    Router::new()
        .route("/api/health", get(|| async { ok(serde_json::json!({"status": "up"})) }))
        .route("/api/sessions", get(list_sessions).post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/use-cases/edits", post(edit_use_cases))
        .route("/api/sessions/{id}/use-cases/approve", post(approve_use_cases))
        .route("/api/sessions/{id}/design", get(get_design).put(edit_design))
        .route("/api/sessions/{id}/design/approve", post(approve_design))
        .route("/api/sessions/{id}/advance", post(advance))
        .route("/api/sessions/{id}/run-auto", post(run_auto))
        .route("/api/sessions/{id}/feedback", post(feedback))
        .route("/api/sessions/{id}/abort", post(abort))
        .route("/api/sessions/{id}/files", get(files))
        .route("/api/sessions/{id}/files/{name}", get(file))
        .route("/api/sessions/{id}/logs", get(logs))
        .route("/api/sessions/{id}/logs/{name}", get(log))
        .route("/api/sessions/{id}/events", get(events))
        .route("/api/bench/tasks", get(bench_tasks))
        .route("/api/bench/drive", post(bench_drive))
        .fallback(|| async {
            ApiError(StatusCode::NOT_FOUND, Box::new(ApiEnvelope::failure("NotFound", "no such endpoint")))
        })
        .method_not_allowed_fallback(|| async {
            ApiError(
                StatusCode::METHOD_NOT_ALLOWED,
                Box::new(ApiEnvelope::failure("MethodNotAllowed", "method not allowed here")),
            )
        })
        .layer(middleware::from_fn_with_state(ctx.clone(), require_token))
        .with_state(ctx)
}

#[derive(Deserialize)]
struct CreateBody {
    task_prompt: String,
    #[serde(default)]
    config: Option<SessionConfig>,
}

async fn create_session(State(ctx): State<Ctx>, Json(body): Json<CreateBody>) -> ApiResult {
    ok(blocking(&ctx, move |app| app.create(&body.task_prompt, body.config)).await?)
}

async fn list_sessions(State(ctx): State<Ctx>) -> ApiResult {
    ok(blocking(&ctx, |app| app.list()).await?)
}

async fn get_session(State(ctx): State<Ctx>, Path(id): Path<String>) -> ApiResult {
    ok(blocking(&ctx, move |app| app.view(&id)).await?)
}

async fn act(ctx: &Ctx, id: String, action: Action) -> ApiResult {
    ok(blocking(ctx, move |app| app.perform(&id, action)).await?)
}

#[derive(Deserialize)]
struct EditsBody {
    edits: Vec<UseCaseEdit>,
}

async fn edit_use_cases(State(ctx): State<Ctx>, Path(id): Path<String>, Json(body): Json<EditsBody>) -> ApiResult {
    act(&ctx, id, Action::EditUseCases { edits: body.edits }).await
}

async fn approve_use_cases(State(ctx): State<Ctx>, Path(id): Path<String>) -> ApiResult {
    act(&ctx, id, Action::ApproveUseCases).await
}

#[derive(Serialize)]
struct DesignView {
    design: Option<SystemDesign>,
    findings: Vec<caseloop_core::parsers::DesignFinding>,
    phase: caseloop_core::session::Phase,
}

async fn get_design(State(ctx): State<Ctx>, Path(id): Path<String>) -> ApiResult {
    let view = blocking(&ctx, move |app| app.view(&id)).await?;
    ok(DesignView { design: view.design, findings: view.design_findings, phase: view.phase })
}

#[derive(Deserialize)]
struct DesignBody {
    design: SystemDesign,
}

async fn edit_design(State(ctx): State<Ctx>, Path(id): Path<String>, Json(body): Json<DesignBody>) -> ApiResult {
    act(&ctx, id, Action::EditDesign { design: body.design }).await
}

async fn approve_design(State(ctx): State<Ctx>, Path(id): Path<String>) -> ApiResult {
    act(&ctx, id, Action::ApproveDesign).await
}

async fn advance(State(ctx): State<Ctx>, Path(id): Path<String>) -> ApiResult {
    act(&ctx, id, Action::Advance).await
}

async fn run_auto(State(ctx): State<Ctx>, Path(id): Path<String>) -> ApiResult {
    act(&ctx, id, Action::RunAuto).await
}

async fn feedback(State(ctx): State<Ctx>, Path(id): Path<String>, Json(feedback): Json<ManualFeedback>) -> ApiResult {
    act(&ctx, id, Action::Feedback { feedback }).await
}

#[derive(Deserialize, Default)]
struct AbortBody {
    #[serde(default)]
    reason: String,
}

async fn abort(State(ctx): State<Ctx>, Path(id): Path<String>, body: Option<Json<AbortBody>>) -> ApiResult {
    let reason = body.map(|b| b.0.reason).unwrap_or_default();
    act(&ctx, id, Action::Abort { reason }).await
}

async fn files(State(ctx): State<Ctx>, Path(id): Path<String>) -> ApiResult {
    ok(blocking(&ctx, move |app| app.files(&id)).await?)
}

#[derive(Serialize)]
struct FileBody {
    name: String,
    content: String,
}

async fn file(State(ctx): State<Ctx>, Path((id, name)): Path<(String, String)>) -> ApiResult {
    let content = blocking(&ctx, {
        let name = name.clone();
        move |app| app.file(&id, &name)
    })
    .await?;
    ok(FileBody { name, content })
}

async fn logs(State(ctx): State<Ctx>, Path(id): Path<String>) -> ApiResult {
    ok(blocking(&ctx, move |app| app.logs(&id)).await?)
}

async fn log(State(ctx): State<Ctx>, Path((id, name)): Path<(String, String)>) -> ApiResult {
    let content = blocking(&ctx, {
        let name = name.clone();
        move |app| app.log(&id, &name)
    })
    .await?;
    ok(FileBody { name, content })
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    after: u64,
    /// Long-poll: wait up to this long for an event past `after`.
    #[serde(default)]
    wait_ms: u64,
}

const MAX_WAIT: Duration = Duration::from_secs(30);
const POLL_EVERY: Duration = Duration::from_millis(50);

/// Events with `seq > after`, in order. With `wait_ms`, holds the request
/// until at least one such event exists or the wait runs out.
async fn events(State(ctx): State<Ctx>, Path(id): Path<String>, Query(q): Query<EventsQuery>) -> ApiResult {
    let deadline = Instant::now() + Duration::from_millis(q.wait_ms).min(MAX_WAIT);
    loop {
        let id = id.clone();
        let found = blocking(&ctx, move |app| app.events_after(&id, q.after)).await?;
        if !found.is_empty() || Instant::now() >= deadline {
            return ok(found);
        }
        tokio::time::sleep(POLL_EVERY).await;
    }
}

#[derive(Deserialize, Default)]
struct SuiteQuery {
    suite: Option<PathBuf>,
}

async fn bench_tasks(State(ctx): State<Ctx>, Query(q): Query<SuiteQuery>) -> ApiResult {
    ok(blocking(&ctx, move |app| app.bench_tasks(q.suite.as_deref())).await?)
}

#[derive(Deserialize)]
struct DriveBody {
    #[serde(default)]
    suite: Option<PathBuf>,
    task_id: String,
    checks: CheckedVerdicts,
    #[serde(default)]
    trial: u32,
}

#[derive(Serialize)]
struct DriveResult {
    record: EvalRecord,
    session_id: String,
}

/// Drives a task with scripted checks. Human verdicts go through the
/// session endpoints instead.
async fn bench_drive(State(ctx): State<Ctx>, Json(body): Json<DriveBody>) -> ApiResult {
    let driven = blocking(&ctx, move |app| {
        let tasks = app.bench_tasks(body.suite.as_deref())?;
        let task = tasks
            .into_iter()
            .find(|t| t.task_id == body.task_id)
            .ok_or_else(|| OpError::NotFound(format!("task `{}`", body.task_id)))?;
        let mut source = body.checks;
        app.bench_drive(&task, body.trial, &mut source)
    })
    .await?;
    ok(DriveResult { record: driven.record, session_id: driven.session_id })
}

/// Serves the API until ctrl-c.
pub async fn serve(app: Arc<App>, bind: &str, token: Option<String>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(app, token))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
