use std::any::Any;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::action::{Action, ActionSpec, ContextBundle, EntityId, Observation};
use crate::components::gm::DispatchPolicy;
use crate::hash::derive_seed;
use crate::lm::{self, ChoiceSample, FloatSample, Lane, LanguageModel, LmCall, LmError, PromptRequest};
use crate::trace::{TraceDraft, TraceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Context,
    Acting,
}

#[derive(Debug, thiserror::Error)]
pub enum ComponentError {
    #[error(transparent)]
    Provider(#[from] LmError),
    #[error("{0}")]
    Failed(String),
    #[error("cannot restore state: {0}")]
    State(String),
}

impl ComponentError {
    pub fn is_fatal(&self) -> bool {
        matches!(self, ComponentError::Provider(e) if e.is_fatal())
    }
}

/// Upcast helper so components can be inspected by concrete type.
pub trait AsAny {
    fn as_any(&self) -> &dyn Any;
    fn as_any_mut(&mut self) -> &mut dyn Any;
}

impl<T: Any> AsAny for T {
    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

/// A reusable unit of state and behavior attached to an entity.
///
/// Components implement any subset of the four hooks. Context components
/// contribute a labeled entry from `pre_act`; the single acting component
/// answers in `decide`. A context component may also answer specific tagged
/// requests (see [`Component::answers`]), which is how a Game Master answers
/// several kinds of question while keeping one acting component.
pub trait Component: AsAny + Send {
    /// Registered type id, e.g. `"persona"`.
    fn type_name(&self) -> &'static str;

    fn kind(&self) -> ComponentKind {
        ComponentKind::Context
    }

    /// True iff `pre_act` does not read earlier entries of the bundle.
    /// Independent components may run their `pre_act` concurrently.
    fn declared_independent(&self) -> bool {
        false
    }

    fn pre_observe(&mut self, _ctx: &mut CallContext<'_>, _obs: &Observation) -> Result<(), ComponentError> {
        Ok(())
    }

    fn post_observe(&mut self, _ctx: &mut CallContext<'_>, _obs: &Observation) -> Result<(), ComponentError> {
        Ok(())
    }

    /// Returns `(label, text)` to add to the context bundle, if any.
    /// `prior` holds the entries of components registered earlier.
    fn pre_act(
        &mut self,
        _ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        _prior: &ContextBundle,
    ) -> Result<Option<(String, String)>, ComponentError> {
        Ok(None)
    }

    /// Whether this context component answers requests carrying `tag`.
    fn answers(&self, _tag: &str) -> bool {
        false
    }

    fn decide(
        &mut self,
        _ctx: &mut CallContext<'_>,
        _bundle: &ContextBundle,
        _spec: &ActionSpec,
    ) -> Result<Action, ComponentError> {
        Err(ComponentError::Failed(format!(
            "{} does not decide actions",
            self.type_name()
        )))
    }

    fn post_act(
        &mut self,
        _ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        _action: &Action,
    ) -> Result<(), ComponentError> {
        Ok(())
    }

    fn snapshot(&self) -> Value {
        Value::Null
    }

    fn restore(&mut self, _state: &Value) -> Result<(), ComponentError> {
        Ok(())
    }

    /// The request a Game Master issues to actors each step.
    fn action_request(&self) -> Option<ActionSpec> {
        None
    }

    /// How a Game Master turns one event into per-entity observations.
    fn dispatch_policy(&self) -> Option<DispatchPolicy> {
        None
    }
}

/// Sampling defaults applied to every provider request of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub max_tokens: u32,
    pub temperature: f64,
    pub retries: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            max_tokens: 256,
            temperature: 0.0,
            retries: lm::DEFAULT_RETRIES,
        }
    }
}

/// What the engine knows at the moment of a call.
#[derive(Clone, Copy)]
pub struct Env<'a> {
    pub lm: &'a dyn LanguageModel,
    pub root_seed: u64,
    pub step: u64,
    pub sim_time: u64,
    /// Player entities, in registration order.
    pub roster: &'a [EntityId],
    pub sampling: Sampling,
}

/// Per-hook view handed to a component.
///
/// Seeds derive from (root seed, entity, step, component, call ordinal), so
/// the order in which different components or entities run cannot change what
/// any of them samples.
pub struct CallContext<'a> {
    env: &'a Env<'a>,
    entity: &'a EntityId,
    component: &'a str,
    ordinal: &'a mut u64,
    drafts: Vec<TraceDraft>,
}

impl<'a> CallContext<'a> {
    pub fn new(env: &'a Env<'a>, entity: &'a EntityId, component: &'a str, ordinal: &'a mut u64) -> Self {
        CallContext {
            env,
            entity,
            component,
            ordinal,
            drafts: Vec::new(),
        }
    }

    pub fn entity(&self) -> &EntityId {
        self.entity
    }

    pub fn component(&self) -> &str {
        self.component
    }

    pub fn step(&self) -> u64 {
        self.env.step
    }

    pub fn sim_time(&self) -> u64 {
        self.env.sim_time
    }

    pub fn roster(&self) -> &[EntityId] {
        self.env.roster
    }

    pub fn root_seed(&self) -> u64 {
        self.env.root_seed
    }

    pub fn sampling(&self) -> Sampling {
        self.env.sampling
    }

    pub fn next_seed(&mut self) -> u64 {
        let seed = derive_seed(
            self.env.root_seed,
            &[
                self.entity.as_str().as_bytes(),
                &self.env.step.to_le_bytes(),
                self.component.as_bytes(),
                &self.ordinal.to_le_bytes(),
            ],
        );
        *self.ordinal += 1;
        seed
    }

    /// A request with this call's lane and the next derived seed.
    pub fn request(&mut self, text: impl Into<String>, tag: &str, subject: Option<&str>) -> PromptRequest {
        let seed = self.next_seed();
        let sampling = self.env.sampling;
        let mut request = PromptRequest::new(text, seed).with_lane(Lane {
            entity: self.entity.to_string(),
            tag: Some(tag.to_string()),
            subject: subject.map(str::to_string),
        });
        request.max_tokens = sampling.max_tokens;
        request.temperature = sampling.temperature;
        request
    }

    pub fn sample_text(
        &mut self,
        text: impl Into<String>,
        tag: &str,
        subject: Option<&str>,
    ) -> Result<String, LmError> {
        let request = self.request(text, tag, subject);
        let mut log = Vec::new();
        let result = lm::sample_text(self.env.lm, request, &mut log);
        self.record_calls(log);
        result
    }

    /// Choice sampling; a fallback answer also records a warning.
    pub fn sample_choice(
        &mut self,
        text: impl Into<String>,
        options: &[String],
        tag: &str,
        subject: Option<&str>,
    ) -> Result<ChoiceSample, LmError> {
        let retries = self.env.sampling.retries;
        self.sample_choice_with_retries(text, options, retries, tag, subject)
    }

    pub fn sample_choice_with_retries(
        &mut self,
        text: impl Into<String>,
        options: &[String],
        retries: u32,
        tag: &str,
        subject: Option<&str>,
    ) -> Result<ChoiceSample, LmError> {
        let request = self.request(text, tag, subject);
        let mut log = Vec::new();
        let result = lm::sample_choice(self.env.lm, request, options, retries, &mut log);
        self.record_calls(log);
        if let Ok(sample) = &result {
            if sample.fallback {
                self.warn(
                    "choice_fallback",
                    format!(
                        "no valid choice after {} attempt(s); using `{}`",
                        retries + 1,
                        sample.option
                    ),
                );
            }
        }
        result
    }

    /// Float sampling; a fallback answer also records a warning.
    pub fn sample_float(
        &mut self,
        text: impl Into<String>,
        tag: &str,
        subject: Option<&str>,
    ) -> Result<FloatSample, LmError> {
        let request = self.request(text, tag, subject);
        let retries = self.env.sampling.retries;
        let mut log = Vec::new();
        let result = lm::sample_float(self.env.lm, request, retries, &mut log);
        self.record_calls(log);
        if let Ok(sample) = &result {
            if sample.fallback {
                self.warn(
                    "float_fallback",
                    format!("no number after {} attempt(s); using 0.0", retries + 1),
                );
            }
        }
        result
    }

    fn record_calls(&mut self, log: Vec<LmCall>) {
        for call in log {
            let request = &call.request;
            let mut payload = json!({
                "component": self.component,
                "tag": request.lane.tag,
                "prompt": request.text,
                "prompt_digest": request.digest(),
                "seed": request.seed,
            });
            if let Some(subject) = &request.lane.subject {
                payload["subject"] = json!(subject);
            }
            match &call.outcome {
                Ok(completion) => {
                    payload["provider"] = json!(completion.provider.as_str());
                    payload["response"] = json!(completion.text);
                    payload["attempts"] = json!(completion.attempts);
                }
                Err(error) => {
                    payload["provider"] = json!(self.env.lm.kind().as_str());
                    payload["error"] = json!(error.to_string());
                    if let LmError::Remote { attempts, .. } = error {
                        payload["attempts"] = json!(attempts);
                    }
                }
            }
            self.emit(TraceKind::LmCall, payload);
        }
    }

    pub fn warn(&mut self, code: &str, message: impl Into<String>) {
        let payload = json!({
            "code": code,
            "component": self.component,
            "message": message.into(),
        });
        self.emit(TraceKind::Warning, payload);
    }

    pub fn emit(&mut self, kind: TraceKind, payload: Value) {
        self.drafts.push(TraceDraft::new(kind, self.entity.as_str(), payload));
    }

    pub fn into_drafts(self) -> Vec<TraceDraft> {
        self.drafts
    }
}
