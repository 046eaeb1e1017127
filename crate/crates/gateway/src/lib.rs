//! HTTP API over the elicitation engine.
//!
//! | Method | Path                     | Success                  |
//! |--------|--------------------------|--------------------------|
//! | POST   | `/projects`              | 201 project + services   |
//! | GET    | `/projects/{id}`         | 200 project              |
//! | POST   | `/projects/{id}/service` | 200 project              |
//! | GET    | `/projects/{id}/sources` | 200 sources with schemas |
//! | POST   | `/projects/{id}/context` | 200 project              |
//! | POST   | `/projects/{id}/run`     | 202 run started          |
//! | GET    | `/projects/{id}/result`  | 200 result               |
//!
//! Errors are [`ApiError`] bodies. When a token is configured every request
//! must carry `Authorization: Bearer <token>`.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tower_http::cors::CorsLayer;

use retta_core::corpus::{ContextSpec, SourceKind};
use retta_core::pipeline::{Engine, ErrorCategory, PipelineError, Project, RunConfig};
use retta_core::registry::{RegionSpec, ServiceDescriptor, ServiceId};

/// Environment variable holding the optional bearer token.
pub const TOKEN_ENV: &str = "RETTA_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Validation,
    State,
    Eligibility,
    Schema,
    NotFound,
    Internal,
}

impl From<ErrorCategory> for ErrorCode {
    fn from(category: ErrorCategory) -> Self {
        match category {
            ErrorCategory::Validation => ErrorCode::Validation,
            ErrorCategory::State => ErrorCode::State,
            ErrorCategory::Eligibility => ErrorCode::Eligibility,
            ErrorCategory::Schema => ErrorCode::Schema,
            ErrorCategory::NotFound => ErrorCode::NotFound,
            ErrorCategory::Internal => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Map<String, Value>>,
    #[serde(skip)]
    status: Option<u16>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            detail: None,
            status: None,
        }
    }

    fn with_status(mut self, status: StatusCode) -> Self {
        self.status = Some(status.as_u16());
        self
    }

    pub fn status(&self) -> StatusCode {
        if let Some(status) = self.status.and_then(|s| StatusCode::from_u16(s).ok()) {
            return status;
        }
        match self.code {
            ErrorCode::Validation => StatusCode::BAD_REQUEST,
            ErrorCode::State | ErrorCode::Eligibility => StatusCode::CONFLICT,
            ErrorCode::Schema => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(error: PipelineError) -> Self {
        let mut api = ApiError::new(error.category().into(), error.to_string());
        let detail = match &error {
            PipelineError::Schema { source_kind, field } => {
                Some(json!({ "source": source_kind, "field": field }))
            }
            PipelineError::State { state, .. } => Some(json!({ "state": state })),
            _ => None,
        };
        api.detail = detail.and_then(|d| d.as_object().cloned());
        api
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    run_config: RunConfig,
    token: Option<String>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, run_config: RunConfig) -> Self {
        AppState {
            engine,
            run_config,
            token: None,
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }
}

/// Body parsing that reports failures as `validation` errors.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let text = if body.is_empty() {
        b"{}".as_slice()
    } else {
        body
    };
    serde_json::from_slice(text)
        .map_err(|e| ApiError::new(ErrorCode::Validation, format!("invalid body: {e}")))
}

/// Runs blocking engine work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, PipelineError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Deserialize)]
struct CreateProject {
    region: RegionSpec,
}

#[derive(Serialize)]
struct Created {
    project: Project,
    eligible_services: Vec<ServiceDescriptor>,
}

async fn create_project(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let request: CreateProject = parse_body(&body)?;
    let engine = state.engine.clone();
    let created = blocking(move || {
        let services = engine.eligible_services(&request.region)?;
        let project = engine.create_project(request.region)?;
        Ok(Created {
            project,
            eligible_services: services,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn get_project(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Project>> {
    let engine = state.engine.clone();
    blocking(move || engine.project(&id)).await.map(Json)
}

#[derive(Deserialize)]
struct SelectService {
    service_id: ServiceId,
}

async fn select_service(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Project>> {
    let request: SelectService = parse_body(&body)?;
    let engine = state.engine.clone();
    blocking(move || engine.select_service(&id, request.service_id))
        .await
        .map(Json)
}

async fn list_sources(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let engine = state.engine.clone();
    let sources = blocking(move || engine.available_sources(&id)).await?;
    Ok(Json(json!({ "sources": sources })))
}

#[derive(Deserialize)]
struct SetContext {
    sources: Vec<SourceKind>,
    #[serde(default)]
    contexts: BTreeMap<SourceKind, ContextSpec>,
}

async fn set_context(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Project>> {
    let request: SetContext = parse_body(&body)?;
    let engine = state.engine.clone();
    blocking(move || engine.set_sources_and_context(&id, &request.sources, &request.contexts))
        .await
        .map(Json)
}

#[derive(Deserialize)]
struct StartRun {
    #[serde(default)]
    reset: bool,
    #[serde(default)]
    run_config: Option<RunConfig>,
}

async fn start_run(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let request: StartRun = parse_body(&body)?;
    let config = request
        .run_config
        .unwrap_or_else(|| state.run_config.clone());
    let engine = state.engine.clone();
    let run_id = id.clone();
    let project = blocking(move || engine.begin_run(&run_id, request.reset)).await?;
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = engine.execute_run(&id, &config) {
            eprintln!("run of project {id} could not be recorded: {e}");
        }
    });
    let body = json!({ "project_id": project.id, "state": project.state });
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

async fn get_result(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let engine = state.engine.clone();
    let result = blocking(move || engine.result(&id)).await?;
    Ok(Json(result).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(ErrorCode::NotFound, "no such route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(ErrorCode::Validation, "method not allowed for this route")
        .with_status(StatusCode::METHOD_NOT_ALLOWED)
}

async fn authorize(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let expected = format!("Bearer {token}");
        let given = request.headers().get(header::AUTHORIZATION);
        if request.method() != Method::OPTIONS
            && given.map(|v| v.as_bytes()) != Some(expected.as_bytes())
        {
            return ApiError::new(ErrorCode::Validation, "missing or invalid bearer token")
                .with_status(StatusCode::UNAUTHORIZED)
                .into_response();
        }
    }
    next.run(request).await
}

/// The API router. `cors_origin` allows browser calls from that origin.
pub fn router(state: AppState, cors_origin: Option<&str>) -> Result<Router, String> {
    let mut router = Router::new()
        .route("/projects", post(create_project))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/service", post(select_service))
        .route("/projects/{id}/sources", get(list_sources))
        .route("/projects/{id}/context", post(set_context))
        .route("/projects/{id}/run", post(start_run))
        .route("/projects/{id}/result", get(get_result))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(middleware::from_fn_with_state(state.clone(), authorize))
        .with_state(state);
    if let Some(origin) = cors_origin {
        let origin: HeaderValue = origin
            .parse()
            .map_err(|_| format!("invalid CORS origin `{origin}`"))?;
        router = router.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION]),
        );
    }
    Ok(router)
}
