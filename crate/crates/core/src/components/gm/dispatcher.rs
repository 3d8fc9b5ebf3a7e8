use serde_json::{json, Value};

use super::{DispatchMode, DispatchPolicy, SecretKnowledge, PERCEIVE_TAG};
use crate::components::{ComponentSpec, Params};
use crate::kernel::{Action, ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle};

/// Controls how events become observations.
///
/// In asymmetric mode it answers `perceive` requests (params `subject` and
/// `event`) with what that entity perceives. If the provider fails the
/// entity observes the plain event.
#[derive(Debug, Clone, Default)]
pub struct ObservationDispatcher {
    policy: DispatchPolicy,
}

impl ObservationDispatcher {
    pub fn new(policy: DispatchPolicy) -> Self {
        ObservationDispatcher { policy }
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        let params = Params::of(spec);
        Ok(ObservationDispatcher::new(DispatchPolicy {
            mode: params.parse::<DispatchMode>("mode")?,
            secrets: params.parse::<Vec<SecretKnowledge>>("secrets")?,
        }))
    }
}

/// The request asking what `subject` perceives of `event`.
pub fn perceive_spec(subject: &str, event: &str) -> ActionSpec {
    ActionSpec::free(format!("Event: {event}\nWhat does {subject} perceive of this event?"))
        .with_tag(PERCEIVE_TAG)
        .with_param("subject", subject)
        .with_param("event", event)
}

impl Component for ObservationDispatcher {
    fn type_name(&self) -> &'static str {
        "observation_dispatcher"
    }

    fn answers(&self, tag: &str) -> bool {
        tag == PERCEIVE_TAG && self.policy.mode == DispatchMode::Asymmetric
    }

    fn dispatch_policy(&self) -> Option<DispatchPolicy> {
        Some(self.policy.clone())
    }

    fn decide(
        &mut self,
        ctx: &mut CallContext<'_>,
        bundle: &ContextBundle,
        spec: &ActionSpec,
    ) -> Result<Action, ComponentError> {
        let event = spec.param("event").unwrap_or_default().to_string();
        let mut prompt = bundle.render();
        prompt.push_str(&spec.call_to_action);
        let text = match ctx.sample_text(prompt, PERCEIVE_TAG, spec.param("subject")) {
            Ok(text) => text,
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                ctx.warn("perceive_failed", format!("delivering the plain event: {e}"));
                event
            }
        };
        Ok(Action::free(ctx.entity().clone(), text))
    }

    fn snapshot(&self) -> Value {
        json!({ "policy": self.policy })
    }
}
