//! axum routes over an [`Engine`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde_json::{json, Map, Value};
use ticketrag::generation::GenerationError;
use tower_http::cors::{Any, CorsLayer};

use crate::engine::{
    Engine, EngineError, FeedbackRequest, GithubWebhook, JiraWebhook, QueryRequest, Route, SuggestRequest,
};

/// An error response: status plus `{"error": ..., "field"?: ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    fn bad(field: &str, message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into(), field: Some(field.to_owned()) }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::BadRequest { field, message } => return ApiError::bad(field, format!("{field}: {message}")),
            EngineError::NotFound(_) => StatusCode::NOT_FOUND,
            EngineError::RemoteUnconfigured | EngineError::EmptyCorpus => StatusCode::CONFLICT,
            EngineError::Generation(GenerationError::Transport(_) | GenerationError::BadResponse(_)) => {
                StatusCode::BAD_GATEWAY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, message: e.to_string(), field: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = Value::String(f);
        }
        (self.status, Json(body)).into_response()
    }
}

/// JSON object body with per-field checks, so a 400 can name the field.
struct Body(Map<String, Value>);

impl Body {
    fn parse(bytes: &[u8]) -> Result<Body, ApiError> {
        match serde_json::from_slice::<Value>(bytes) {
            Ok(Value::Object(m)) => Ok(Body(m)),
            Ok(_) => Err(ApiError::bad("body", "expected a JSON object")),
            Err(e) => Err(ApiError::bad("body", format!("invalid JSON: {e}"))),
        }
    }

    fn field<T: DeserializeOwned>(&self, name: &str, required: bool) -> Result<Option<T>, ApiError> {
        match self.0.get(name) {
            None | Some(Value::Null) if required => Err(ApiError::bad(name, format!("{name} is required"))),
            None | Some(Value::Null) => Ok(None),
            Some(v) => T::deserialize(v).map(Some).map_err(|e| ApiError::bad(name, format!("{name}: {e}"))),
        }
    }

    fn required<T: DeserializeOwned>(&self, name: &str) -> Result<T, ApiError> {
        Ok(self.field(name, true)?.expect("required field present"))
    }

    fn optional<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>, ApiError> {
        self.field(name, false)
    }

    fn object(&self, name: &str) -> Result<Body, ApiError> {
        match self.0.get(name) {
            Some(Value::Object(m)) => Ok(Body(m.clone())),
            Some(_) => Err(ApiError::bad(name, format!("{name} must be an object"))),
            None => Err(ApiError::bad(name, format!("{name} is required"))),
        }
    }
}

fn text_field(body: &Body, name: &str) -> Result<String, ApiError> {
    let t: String = body.required(name)?;
    if t.trim().is_empty() {
        return Err(ApiError::bad(name, format!("{name} must not be empty")));
    }
    Ok(t)
}

/// Runs blocking engine work off the async workers.
async fn blocking<T, F>(engine: &Arc<Engine>, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
    T: Send + 'static,
{
    let e = engine.clone();
    let out = tokio::task::spawn_blocking(move || f(&e)).await.map_err(|j| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: format!("worker failed: {j}"),
        field: None,
    })?;
    out.map_err(ApiError::from)
}

/// Counts the request and any error it produces.
fn counted<T: IntoResponse>(engine: &Engine, route: Route, r: Result<T, ApiError>) -> Response {
    engine.metrics().request(route);
    match r {
        Ok(v) => v.into_response(),
        Err(e) => {
            engine.metrics().error();
            e.into_response()
        }
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn query(State(engine): State<Arc<Engine>>, bytes: Bytes) -> Response {
    let r = async {
        let b = Body::parse(&bytes)?;
        let req = QueryRequest { text: text_field(&b, "text")?, k: b.optional("k")?, now: b.optional("now")? };
        blocking(&engine, move |e| e.query(&req)).await.map(Json)
    }
    .await;
    counted(&engine, Route::Query, r)
}

async fn suggest(State(engine): State<Arc<Engine>>, bytes: Bytes) -> Response {
    let r = async {
        let b = Body::parse(&bytes)?;
        let req = SuggestRequest {
            text: text_field(&b, "text")?,
            generator: b.optional("generator")?,
            now: b.optional("now")?,
        };
        blocking(&engine, move |e| e.suggest(&req)).await.map(Json)
    }
    .await;
    counted(&engine, Route::Suggest, r)
}

async fn suggestion(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> Response {
    match engine.suggestion(&id) {
        Some(r) => Json(r).into_response(),
        None => ApiError::from(EngineError::NotFound(id)).into_response(),
    }
}

async fn feedback(State(engine): State<Arc<Engine>>, bytes: Bytes) -> Response {
    let r = async {
        let b = Body::parse(&bytes)?;
        let req = FeedbackRequest {
            suggestion_id: text_field(&b, "suggestion_id")?,
            verdict: b.required("verdict")?,
            edited_steps: b.optional("edited_steps")?,
            actor: text_field(&b, "actor")?,
        };
        blocking(&engine, move |e| e.feedback(req, Utc::now())).await.map(|()| StatusCode::NO_CONTENT)
    }
    .await;
    counted(&engine, Route::Feedback, r)
}

async fn metrics(State(engine): State<Arc<Engine>>) -> Response {
    Json(engine.metrics().view()).into_response()
}

async fn webhook_jira(State(engine): State<Arc<Engine>>, bytes: Bytes) -> Response {
    let r = async {
        let b = Body::parse(&bytes)?;
        let issue = b.object("issue")?;
        let hook: JiraWebhook = serde_json::from_value(json!({
            "issue": {
                "key": text_field(&issue, "key").map_err(|e| ApiError::bad("issue.key", e.message))?,
                "title": issue.required::<String>("title").map_err(|e| ApiError::bad("issue.title", e.message))?,
                "description": issue.optional::<String>("description")?.unwrap_or_default(),
            }
        }))
        .expect("shape built above");
        let now: Option<DateTime<Utc>> = b.optional("now")?;
        blocking(&engine, move |e| e.jira_webhook(&hook, now)).await.map(Json)
    }
    .await;
    counted(&engine, Route::WebhookJira, r)
}

async fn webhook_github(State(engine): State<Arc<Engine>>, bytes: Bytes) -> Response {
    let r = async {
        let b = Body::parse(&bytes)?;
        let hook = GithubWebhook {
            repo: text_field(&b, "repo")?,
            number: b.required("number")?,
            title: b.required("title")?,
            body: b.optional("body")?.unwrap_or_default(),
        };
        let now: Option<DateTime<Utc>> = b.optional("now")?;
        blocking(&engine, move |e| e.github_webhook(&hook, now)).await.map(Json)
    }
    .await;
    counted(&engine, Route::WebhookGithub, r)
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/query", post(query))
        .route("/suggest", post(suggest))
        .route("/suggestions/{id}", get(suggestion))
        .route("/feedback", post(feedback))
        .route("/metrics", get(metrics))
        .route("/webhooks/jira", post(webhook_jira))
        .route("/webhooks/github", post(webhook_github))
        .layer(CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any))
        .with_state(engine)
}

/// Binds `addr` and serves until the process exits. Returns the bound
/// address through `on_bound` before accepting connections.
pub async fn serve(engine: Arc<Engine>, addr: &str, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(engine)).await
}
