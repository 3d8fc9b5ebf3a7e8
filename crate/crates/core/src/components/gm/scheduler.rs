use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::NEXT_WAKE_TAG;
use crate::components::{ComponentSpec, Params};
use crate::hash::derive_seed;
use crate::kernel::{
    Action, ActionPayload, ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerMode {
    #[default]
    Rule,
    Provider,
}

/// `now + 1 + (hash(seed, entity, now) mod jitter)`.
pub fn rule_wake_time(seed: u64, entity: &str, now: u64, jitter: u64) -> u64 {
    let h = derive_seed(seed, &[b"wake", entity.as_bytes(), &now.to_le_bytes()]);
    now + 1 + h % jitter.max(1)
}

/// Answers `next_wake` requests (params `subject` and `now`) in
/// asynchronous episodes.
#[derive(Debug, Clone)]
pub struct Scheduler {
    mode: SchedulerMode,
    jitter: u64,
}

impl Scheduler {
    pub fn new(mode: SchedulerMode, jitter: u64) -> Self {
        Scheduler { mode, jitter }
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        let params = Params::of(spec);
        Ok(Scheduler::new(
            params.parse("mode")?,
            params.positive_u64_or("jitter", 5)?,
        ))
    }
}

impl Component for Scheduler {
    fn type_name(&self) -> &'static str {
        "scheduler"
    }

    fn answers(&self, tag: &str) -> bool {
        tag == NEXT_WAKE_TAG
    }

    fn decide(
        &mut self,
        ctx: &mut CallContext<'_>,
        bundle: &ContextBundle,
        spec: &ActionSpec,
    ) -> Result<Action, ComponentError> {
        let gm = ctx.entity().clone();
        let subject = spec.param("subject").unwrap_or_default().to_string();
        let now: u64 = spec.param("now").and_then(|n| n.parse().ok()).unwrap_or(0);
        let (value, fallback) = match self.mode {
            SchedulerMode::Rule => (
                rule_wake_time(ctx.root_seed(), &subject, now, self.jitter) as f64,
                false,
            ),
            SchedulerMode::Provider => {
                let mut prompt = bundle.render();
                prompt.push_str(&spec.call_to_action);
                let sample = ctx.sample_float(prompt, NEXT_WAKE_TAG, Some(&subject))?;
                (sample.value, sample.fallback)
            }
        };
        let mut action = Action::new(gm, value.to_string(), ActionPayload::Number { value });
        action.fallback = fallback;
        Ok(action)
    }

    fn snapshot(&self) -> Value {
        json!({ "mode": self.mode, "jitter": self.jitter })
    }
}
