use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::components::{BuildContext, ComponentSpec, Params};
use crate::kernel::{
    Action, ActionPayload, ActionSpec, BuildError, CallContext, Component, ComponentError, ComponentKind,
    ContextBundle, EntityId, OutputType,
};

/// What a human player is being asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingActionRequest {
    pub request_id: String,
    pub entity: EntityId,
    pub spec: ActionSpec,
    pub context_summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HumanReply {
    Submitted(String),
    TimedOut,
    Closed,
}

/// A channel to a human player. Blocks until the player answers, the
/// timeout fires, or the channel closes.
pub trait HumanInput: Send + Sync {
    fn await_action(&self, request: &PendingActionRequest, timeout: Option<Duration>) -> HumanReply;
}

/// A channel nobody listens to; every request times out immediately.
#[derive(Debug, Default, Clone, Copy)]
pub struct ClosedInput;

impl HumanInput for ClosedInput {
    fn await_action(&self, _request: &PendingActionRequest, _timeout: Option<Duration>) -> HumanReply {
        HumanReply::Closed
    }
}

/// Pre-supplied answers, served in order; closed when empty.
#[derive(Debug, Default)]
pub struct QueuedInput {
    answers: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<PendingActionRequest>>,
}

impl QueuedInput {
    pub fn new<S: Into<String>>(answers: impl IntoIterator<Item = S>) -> Self {
        QueuedInput {
            answers: Mutex::new(answers.into_iter().map(Into::into).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Every request received, including repeats after invalid answers.
    pub fn requests(&self) -> Vec<PendingActionRequest> {
        self.seen.lock().clone()
    }
}

impl HumanInput for QueuedInput {
    fn await_action(&self, request: &PendingActionRequest, _timeout: Option<Duration>) -> HumanReply {
        self.seen.lock().push(request.clone());
        match self.answers.lock().pop_front() {
            Some(answer) => HumanReply::Submitted(answer),
            None => HumanReply::Closed,
        }
    }
}

/// Acting component driven by a human through a [`HumanInput`].
///
/// Answers are validated against the spec like model answers; an invalid
/// answer leaves the request pending. On timeout or a closed channel the
/// entity waits: `"{name} waits."` for free-text specs, or the index-0
/// option / 0.0 (flagged as fallback) for choice and numeric specs.
pub struct HumanActing {
    input: Arc<dyn HumanInput>,
    timeout: Option<Duration>,
    issued: u64,
}

impl HumanActing {
    pub fn new(input: Arc<dyn HumanInput>, timeout: Option<Duration>) -> Self {
        HumanActing {
            input,
            timeout,
            issued: 0,
        }
    }

    pub fn from_spec(spec: &ComponentSpec, ctx: &mut BuildContext<'_>) -> Result<Self, BuildError> {
        let params = Params::of(spec);
        let timeout = match params.u64_or("timeout_secs", 0)? {
            0 => None,
            secs => Some(Duration::from_secs(secs)),
        };
        let input = ctx
            .resources
            .human_input
            .clone()
            .unwrap_or_else(|| Arc::new(ClosedInput));
        Ok(HumanActing::new(input, timeout))
    }

    fn waiting_action(actor: EntityId, spec: &ActionSpec) -> Action {
        let text = format!("{actor} waits.");
        let mut action = match spec.output_type {
            OutputType::Free => return Action::free(actor, text),
            OutputType::Choice => Action::new(
                actor,
                text,
                ActionPayload::Choice {
                    option: spec.options[0].clone(),
                    index: 0,
                },
            ),
            OutputType::Float => Action::new(actor, text, ActionPayload::Number { value: 0.0 }),
        };
        action.fallback = true;
        action
    }
}

impl Component for HumanActing {
    fn type_name(&self) -> &'static str {
        "human_acting"
    }

    fn kind(&self) -> ComponentKind {
        ComponentKind::Acting
    }

    fn decide(
        &mut self,
        ctx: &mut CallContext<'_>,
        bundle: &ContextBundle,
        spec: &ActionSpec,
    ) -> Result<Action, ComponentError> {
        let actor = ctx.entity().clone();
        let request = PendingActionRequest {
            request_id: format!("{}-{}", actor, self.issued),
            entity: actor.clone(),
            spec: spec.clone(),
            context_summary: bundle
                .get("Recent observations")
                .map(str::to_string)
                .unwrap_or_else(|| bundle.render()),
        };
        self.issued += 1;
        loop {
            match self.input.await_action(&request, self.timeout) {
                HumanReply::Submitted(text) => match spec.parse_answer(&text) {
                    Ok(payload) => return Ok(Action::new(actor, text, payload)),
                    Err(e) => ctx.warn("invalid_submission", e.to_string()),
                },
                HumanReply::TimedOut | HumanReply::Closed => {
                    ctx.warn("human_timeout", format!("no answer for request {}", request.request_id));
                    return Ok(Self::waiting_action(actor, spec));
                }
            }
        }
    }

    fn snapshot(&self) -> Value {
        json!({ "issued": self.issued, "timeout_secs": self.timeout.map(|t| t.as_secs()) })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        self.issued = state.get("issued").and_then(Value::as_u64).unwrap_or(0);
        Ok(())
    }
}
