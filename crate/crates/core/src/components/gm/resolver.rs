use serde_json::{json, Value};

use super::RESOLVE_TAG;
use crate::components::actor::LmActing;
use crate::components::{ComponentSpec, Params};
use crate::kernel::{
    Action, ActionSpec, BuildError, CallContext, Component, ComponentError, ComponentKind, ContextBundle,
};

pub const DEFAULT_CALL: &str = "What does {name} do next?";

/// The request the GM sends to resolve `actor`'s attempted action.
pub fn resolve_spec(actor: &str, attempt: &str) -> ActionSpec {
    ActionSpec::free(format!(
        "{actor} attempts: {attempt}\nWhat actually happens as a result? Answer with a single statement of the event."
    ))
    .with_tag(RESOLVE_TAG)
    .with_param("actor", actor)
    .with_param("attempt", attempt)
}

/// The GM's acting component: turns attempted actions into events.
///
/// Requests tagged `resolve` produce an event statement; if the provider
/// fails the attempt simply succeeds. Other untagged requests are answered
/// like an ordinary language-model actor.
#[derive(Debug, Clone)]
pub struct EventResolver {
    action_spec: ActionSpec,
    recent: usize,
    events: Vec<String>,
}

impl EventResolver {
    pub fn new(action_spec: ActionSpec) -> Self {
        EventResolver {
            action_spec,
            recent: 5,
            events: Vec::new(),
        }
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        let params = Params::of(spec);
        let action_spec = params
            .parse_opt::<ActionSpec>("action_spec")?
            .unwrap_or_else(|| ActionSpec::free(DEFAULT_CALL));
        action_spec.validate().map_err(|e| BuildError::InvalidParameter {
            component: spec.name.clone(),
            param: "action_spec".into(),
            detail: e.to_string(),
        })?;
        let mut resolver = EventResolver::new(action_spec);
        resolver.recent = params.u64_or("recent_events", 5)? as usize;
        Ok(resolver)
    }

    pub fn events(&self) -> &[String] {
        &self.events
    }

    fn resolution_prompt(&self, bundle: &ContextBundle, spec: &ActionSpec) -> String {
        let mut prompt = bundle.render();
        prompt.push_str("## Events so far\n");
        let start = self.events.len().saturating_sub(self.recent);
        if start == self.events.len() {
            prompt.push_str("(none)\n");
        }
        for event in &self.events[start..] {
            prompt.push_str(event);
            prompt.push('\n');
        }
        prompt.push_str(&spec.call_to_action);
        prompt
    }
}

impl Component for EventResolver {
    fn type_name(&self) -> &'static str {
        "event_resolver"
    }

    fn kind(&self) -> ComponentKind {
        ComponentKind::Acting
    }

    fn action_request(&self) -> Option<ActionSpec> {
        Some(self.action_spec.clone())
    }

    fn decide(
        &mut self,
        ctx: &mut CallContext<'_>,
        bundle: &ContextBundle,
        spec: &ActionSpec,
    ) -> Result<Action, ComponentError> {
        if spec.tag() != Some(RESOLVE_TAG) {
            return LmActing.decide(ctx, bundle, spec);
        }
        let attempt = spec.param("attempt").unwrap_or_default().to_string();
        let prompt = self.resolution_prompt(bundle, spec);
        let event = match ctx.sample_text(prompt, RESOLVE_TAG, spec.param("actor")) {
            Ok(event) => event,
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                ctx.warn("resolve_failed", format!("the attempt stands as the event: {e}"));
                attempt
            }
        };
        self.events.push(event.clone());
        Ok(Action::free(ctx.entity().clone(), event))
    }

    fn snapshot(&self) -> Value {
        json!({ "action_spec": self.action_spec, "events": self.events })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        self.events = serde_json::from_value(state.get("events").cloned().unwrap_or_default())
            .map_err(|e| ComponentError::State(e.to_string()))?;
        if let Some(spec) = state.get("action_spec") {
            self.action_spec =
                serde_json::from_value(spec.clone()).map_err(|e| ComponentError::State(e.to_string()))?;
        }
        Ok(())
    }
}
