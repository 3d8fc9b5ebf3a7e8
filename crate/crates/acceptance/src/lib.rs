//! Fixtures for the acceptance suite: an instrumented component, a stub
//! chat-completion server, and a latency-injecting provider wrapper.

use std::net::TcpListener;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use fabula_core::hash::fnv1a64;
use fabula_core::kernel::{
    Action, ActionSpec, CallContext, Component, ComponentError, ComponentKind, ContextBundle, Observation,
};
use fabula_core::lm::{Completion, LanguageModel, LmError, PromptRequest, ProviderKind};
use parking_lot::Mutex;
use serde_json::{json, Value};
use tokio::sync::oneshot;

pub type HookLog = Arc<Mutex<Vec<String>>>;

/// Records every hook call as `"{hook}:{name}"`. The acting probe records
/// `"decide:{name}:{bundle components}"`.
pub struct Probe {
    pub name: String,
    pub acting: bool,
    pub independent: bool,
    pub contributes: bool,
    pub log: HookLog,
}

impl Probe {
    fn record(&self, hook: &str) {
        self.log.lock().push(format!("{hook}:{}", self.name));
    }
}

impl Component for Probe {
    fn type_name(&self) -> &'static str {
        "probe"
    }

    fn kind(&self) -> ComponentKind {
        if self.acting {
            ComponentKind::Acting
        } else {
            ComponentKind::Context
        }
    }

    fn declared_independent(&self) -> bool {
        self.independent
    }

    fn pre_observe(&mut self, _ctx: &mut CallContext<'_>, _obs: &Observation) -> Result<(), ComponentError> {
        self.record("pre_observe");
        Ok(())
    }

    fn post_observe(&mut self, _ctx: &mut CallContext<'_>, _obs: &Observation) -> Result<(), ComponentError> {
        self.record("post_observe");
        Ok(())
    }

    fn pre_act(
        &mut self,
        _ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        _prior: &ContextBundle,
    ) -> Result<Option<(String, String)>, ComponentError> {
        self.record("pre_act");
        Ok(self
            .contributes
            .then(|| (format!("label {}", self.name), format!("text of {}", self.name))))
    }

    fn decide(
        &mut self,
        ctx: &mut CallContext<'_>,
        bundle: &ContextBundle,
        _spec: &ActionSpec,
    ) -> Result<Action, ComponentError> {
        let order: Vec<&str> = bundle.entries.iter().map(|e| e.component.as_str()).collect();
        self.log
            .lock()
            .push(format!("decide:{}:{}", self.name, order.join(",")));
        Ok(Action::free(ctx.entity().clone(), "acts"))
    }

    fn post_act(
        &mut self,
        _ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        _action: &Action,
    ) -> Result<(), ComponentError> {
        self.record("post_act");
        Ok(())
    }
}

/// The stub's answer to a prompt: the first listed option for choice
/// prompts, `3` for numeric prompts, otherwise a sentence keyed by the
/// prompt hash.
pub fn stub_answer(prompt: &str) -> String {
    if let Some(rest) = prompt.split("\nOptions:\n").nth(1) {
        if let Some(first) = rest.lines().next() {
            if let Some((_, option)) = first.split_once(". ") {
                return option.to_string();
            }
        }
    }
    if prompt.contains("Answer with a number.") {
        return "3".into();
    }
    format!("Something shifts ({:04}).", fnv1a64(prompt.as_bytes()) % 10_000)
}

struct StubState {
    hits: AtomicU64,
    failures_left: AtomicU32,
}

async fn completions(State(state): State<Arc<StubState>>, Json(body): Json<Value>) -> Response {
    state.hits.fetch_add(1, Ordering::SeqCst);
    let failing = state
        .failures_left
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    if failing {
        return (StatusCode::SERVICE_UNAVAILABLE, "try again").into_response();
    }
    let prompt = body
        .pointer("/messages/0/content")
        .and_then(Value::as_str)
        .unwrap_or_default();
    Json(json!({
        "choices": [{ "message": { "role": "assistant", "content": stub_answer(prompt) } }]
    }))
    .into_response()
}

/// A local chat-completion endpoint that counts requests and can answer
/// 503 to the first few.
pub struct StubServer {
    pub url: String,
    state: Arc<StubState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(initial_failures: u32) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let url = format!("http://{}", listener.local_addr()?);
        let state = Arc::new(StubState {
            hits: AtomicU64::new(0),
            failures_left: AtomicU32::new(initial_failures),
        });
        let (tx, rx) = oneshot::channel();
        let app = Router::new()
            .route("/chat/completions", post(completions))
            .with_state(state.clone());
        let thread = thread::spawn(move || {
            let runtime = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .expect("stub runtime");
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("stub listener");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .expect("stub server");
            });
        });
        Ok(StubServer {
            url,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    /// Requests received so far, failed ones included.
    pub fn hits(&self) -> u64 {
        self.state.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

/// Delays every call; makes concurrent requests overlap a running step.
pub struct Slow {
    pub inner: Arc<dyn LanguageModel>,
    pub delay: Duration,
}

impl LanguageModel for Slow {
    fn kind(&self) -> ProviderKind {
        self.inner.kind()
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion, LmError> {
        thread::sleep(self.delay);
        self.inner.complete(request)
    }
}
