use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{choice_action, TERMINATE_TAG};
use crate::components::{ComponentSpec, Params};
use crate::kernel::{
    Action, ActionPayload, ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle,
};

pub const TERMINATION_QUESTION: &str = "Has the episode reached a natural conclusion?";

/// The end-of-step question. Option 0 is "no", so a fallback keeps the
/// episode running.
pub fn termination_spec() -> ActionSpec {
    ActionSpec::choice(TERMINATION_QUESTION, ["no", "yes"]).with_tag(TERMINATE_TAG)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TerminationMode {
    #[default]
    Ask,
    Never,
}

/// Decides whether the episode is over.
#[derive(Debug, Clone, Default)]
pub struct Terminator {
    mode: TerminationMode,
}

impl Terminator {
    pub fn asking() -> Self {
        Terminator {
            mode: TerminationMode::Ask,
        }
    }

    pub fn never() -> Self {
        Terminator {
            mode: TerminationMode::Never,
        }
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        Ok(Terminator {
            mode: Params::of(spec).parse("mode")?,
        })
    }
}

impl Component for Terminator {
    fn type_name(&self) -> &'static str {
        "terminator"
    }

    fn answers(&self, tag: &str) -> bool {
        tag == TERMINATE_TAG
    }

    fn decide(
        &mut self,
        ctx: &mut CallContext<'_>,
        bundle: &ContextBundle,
        spec: &ActionSpec,
    ) -> Result<Action, ComponentError> {
        let gm = ctx.entity().clone();
        if self.mode == TerminationMode::Never {
            let option = spec.options[0].clone();
            return Ok(Action::new(
                gm,
                option.clone(),
                ActionPayload::Choice { option, index: 0 },
            ));
        }
        let mut prompt = bundle.render();
        prompt.push_str(&spec.call_to_action);
        let sample = ctx.sample_choice(prompt, &spec.options, TERMINATE_TAG, None)?;
        Ok(choice_action(gm, sample))
    }

    fn snapshot(&self) -> Value {
        json!({ "mode": self.mode })
    }
}
