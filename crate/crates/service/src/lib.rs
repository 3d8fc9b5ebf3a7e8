//! HTTP session server: scenario runs driven step by step or continuously,
//! with a long-polled event log and a mailbox for one human actor.

mod error;
mod session;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use fabula_core::components::ComponentRegistry;
use fabula_core::engine::EngineKind;
use fabula_core::lm::LanguageModel;
use fabula_core::prefab::{validate, PrefabRegistry, ScenarioDoc};
use fabula_core::runner::{LoadedScenario, RunOptions};
use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::watch;

pub use error::ApiError;
pub use session::{Mode, Refusal, Session, SessionView, Snapshot, Status};

/// Wraps every provider a session is given; used to inject latency or
/// call counting.
pub type ProviderWrapper = Arc<dyn Fn(Arc<dyn LanguageModel>) -> Arc<dyn LanguageModel> + Send + Sync>;

#[derive(Clone)]
pub struct ServiceConfig {
    /// Live sessions allowed at once.
    pub capacity: usize,
    /// How long a human turn waits before the actor waits instead.
    pub human_timeout: Duration,
    /// Longest an empty event poll is held open.
    pub poll_timeout: Duration,
    /// Directory scenario-relative paths resolve against.
    pub base_dir: PathBuf,
    pub provider_wrapper: Option<ProviderWrapper>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            capacity: 64,
            human_timeout: Duration::from_secs(300),
            poll_timeout: Duration::from_secs(25),
            base_dir: PathBuf::from("."),
            provider_wrapper: None,
        }
    }
}

pub struct AppState {
    config: ServiceConfig,
    prefabs: PrefabRegistry,
    components: ComponentRegistry,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            config,
            prefabs: PrefabRegistry::builtin(),
            components: ComponentRegistry::builtin(),
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session {id}")))
    }

    fn human_slots(&self, doc: &ScenarioDoc) -> Vec<usize> {
        doc.actors
            .iter()
            .enumerate()
            .filter(|(_, slot)| {
                self.prefabs
                    .get(&slot.prefab)
                    .is_some_and(|p| p.uses_component("human_acting"))
            })
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/prefabs", get(list_prefabs))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/resume", post(resume_session))
        .route("/sessions/{id}/pause", post(pause_session))
        .route("/sessions/{id}/events", get(get_events))
        .route("/sessions/{id}/pending", get(get_pending))
        .route("/sessions/{id}/actions", post(submit_action))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(config))).await
}

fn canonical(status: StatusCode, body: &Value) -> Response {
    let text = fabula_core::canonical::value_to_string(body);
    Response::builder()
        .status(status)
        .header("content-type", "application/json")
        .body(text.into())
        .expect("static response parts")
}

fn ok(body: &Value) -> Response {
    canonical(StatusCode::OK, body)
}

fn view_json(view: &SessionView) -> Value {
    serde_json::to_value(view).expect("view serializes")
}

async fn list_prefabs(State(state): State<Arc<AppState>>) -> Response {
    let catalog: Value = serde_json::from_str(&state.prefabs.catalog_json()).expect("catalog is JSON");
    ok(&catalog)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    scenario: Value,
    #[serde(default)]
    mode: Option<Mode>,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let value: Value = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MalformedJson", e.to_string()))?;
    let request: CreateRequest = serde_json::from_value(value)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidRequest", e.to_string()))?;
    let doc: ScenarioDoc = serde_json::from_value(request.scenario).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidScenario", e.to_string()).at("scenario")
    })?;
    let report = validate(&doc, &state.prefabs, &state.components);
    if let Some(first) = report.errors().next() {
        let issues = serde_json::to_value(&report.issues).expect("issues serialize");
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "ValidationFailed",
            first.message.clone(),
        )
        .at(first.path.clone())
        .with("issues", issues));
    }
    let humans = state.human_slots(&doc);
    if humans.len() > 1 {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "TooManyHumans",
            format!("{} human actors; a session supports one", humans.len()),
        )
        .at(format!("actors[{}]", humans[1])));
    }
    if !humans.is_empty() && doc.engine == EngineKind::Asynchronous {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "HumanInAsynchronous",
            "human actors are supported by the simultaneous and sequential engines only",
        )
        .at("engine"));
    }
    let loaded = LoadedScenario::new(doc.clone(), state.config.base_dir.clone());
    let mut lm = loaded
        .provider(&RunOptions::default())
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ProviderConfig", e.to_string()).at("provider"))?;
    if let Some(wrap) = &state.config.provider_wrapper {
        lm = wrap(lm);
    }
    let mode = request.mode.unwrap_or(Mode::Auto);
    let session = {
        let mut sessions = state.sessions.lock();
        if sessions.len() >= state.config.capacity {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "CapacityExceeded",
                format!("{} sessions are open", sessions.len()),
            ));
        }
        let id = format!("s{:06}", state.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Session::spawn(id.clone(), doc, mode, state.config.human_timeout, lm);
        sessions.insert(id, session.clone());
        session
    };
    Ok(canonical(StatusCode::CREATED, &view_json(&session.view())))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(ok(&view_json(&state.session(&id)?.view())))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    state.sessions.lock().remove(&id);
    session.close();
    Ok(ok(&json!({ "id": id, "deleted": true })))
}

fn refused(refusal: Refusal) -> ApiError {
    match refusal {
        Refusal::Finished(status) => ApiError::new(
            StatusCode::CONFLICT,
            "SessionFinished",
            format!("the session is {}", status_name(status)),
        ),
        Refusal::Busy(status) => ApiError::new(
            StatusCode::CONFLICT,
            "StepInProgress",
            format!("a step is already executing ({})", status_name(status)),
        ),
        Refusal::NoPending => ApiError::new(StatusCode::CONFLICT, "StaleRequest", "no action is pending"),
        Refusal::StaleRequest { expected } => ApiError::new(
            StatusCode::CONFLICT,
            "StaleRequest",
            format!("the pending request is {expected}"),
        )
        .at("request_id"),
        Refusal::Invalid(detail) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidAction", detail).at("text"),
    }
}

fn status_name(status: Status) -> String {
    serde_json::to_value(status)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Waits until the engine thread stops running: paused, waiting on the
/// human, or finished.
async fn settled(session: &Session, mut rx: watch::Receiver<Snapshot>) -> SessionView {
    let _ = rx.wait_for(|s| s.status != Status::Running).await;
    session.view()
}

async fn step_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let rx = session.subscribe();
    session.request_step().map_err(refused)?;
    Ok(ok(&view_json(&settled(&session, rx).await)))
}

async fn resume_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let rx = session.subscribe();
    session.request_resume().map_err(refused)?;
    Ok(ok(&view_json(&settled(&session, rx).await)))
}

async fn pause_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    session.request_pause().map_err(refused)?;
    Ok(ok(&view_json(&session.view())))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default = "before_start")]
    since: i64,
}

fn before_start() -> i64 {
    -1
}

async fn get_events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let wanted = usize::try_from(query.since.saturating_add(2)).unwrap_or(1);
    let mut rx = session.subscribe();
    let _ = tokio::time::timeout(
        state.config.poll_timeout,
        rx.wait_for(|s| s.events >= wanted || s.status.is_final()),
    )
    .await;
    let events = serde_json::to_value(session.events_since(query.since)).expect("events serialize");
    Ok(ok(&events))
}

async fn get_pending(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let pending = state.session(&id)?.pending();
    Ok(ok(&serde_json::to_value(pending).expect("request serializes")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionBody {
    request_id: String,
    text: String,
}

async fn submit_action(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let body: ActionBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MalformedJson", e.to_string()))?;
    let rx = session.subscribe();
    session.submit(&body.request_id, &body.text).map_err(refused)?;
    Ok(ok(&view_json(&settled(&session, rx).await)))
}
