use serde_json::{json, Value};

use super::{choice_action, NEXT_ACTING_TAG};
use crate::components::{ComponentSpec, Params};
use crate::kernel::{
    Action, ActionPayload, ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle,
};

/// Picks which actor acts next in a sequential episode.
///
/// The request is a choice over the roster; a one-actor roster is answered
/// without a provider call.
#[derive(Debug, Clone)]
pub struct NextActing {
    retries: u32,
}

impl NextActing {
    pub fn new(retries: u32) -> Self {
        NextActing { retries }
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        Ok(NextActing::new(Params::of(spec).u64_or("retries", 2)? as u32))
    }
}

impl Component for NextActing {
    fn type_name(&self) -> &'static str {
        "next_acting"
    }

    fn answers(&self, tag: &str) -> bool {
        tag == NEXT_ACTING_TAG
    }

    fn decide(
        &mut self,
        ctx: &mut CallContext<'_>,
        bundle: &ContextBundle,
        spec: &ActionSpec,
    ) -> Result<Action, ComponentError> {
        let gm = ctx.entity().clone();
        if spec.options.len() == 1 {
            let option = spec.options[0].clone();
            return Ok(Action::new(
                gm,
                option.clone(),
                ActionPayload::Choice { option, index: 0 },
            ));
        }
        let mut prompt = bundle.render();
        prompt.push_str(&spec.call_to_action);
        let sample = ctx.sample_choice_with_retries(prompt, &spec.options, self.retries, NEXT_ACTING_TAG, None)?;
        Ok(choice_action(gm, sample))
    }

    fn snapshot(&self) -> Value {
        json!({ "retries": self.retries })
    }
}
