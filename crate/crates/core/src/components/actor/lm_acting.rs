use crate::kernel::{
    Action, ActionPayload, ActionSpec, CallContext, Component, ComponentError, ComponentKind, ContextBundle, OutputType,
};

/// Acting component that asks the language model.
///
/// The prompt is the rendered context bundle followed by the call to action.
#[derive(Debug, Clone, Copy, Default)]
pub struct LmActing;

impl LmActing {
    pub fn prompt(bundle: &ContextBundle, spec: &ActionSpec) -> String {
        let mut prompt = bundle.render();
        prompt.push_str(&spec.call_to_action);
        prompt
    }
}

impl Component for LmActing {
    fn type_name(&self) -> &'static str {
        "lm_acting"
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
        let prompt = Self::prompt(bundle, spec);
        let tag = spec.tag().unwrap_or("action").to_string();
        let actor = ctx.entity().clone();
        let action = match spec.output_type {
            OutputType::Free => Action::free(actor, ctx.sample_text(prompt, &tag, None)?),
            OutputType::Choice => {
                let sample = ctx.sample_choice(prompt, &spec.options, &tag, None)?;
                let mut action = Action::new(
                    actor,
                    sample.option.clone(),
                    ActionPayload::Choice {
                        option: sample.option,
                        index: sample.index,
                    },
                );
                action.fallback = sample.fallback;
                action
            }
            OutputType::Float => {
                let sample = ctx.sample_float(prompt, &tag, None)?;
                let mut action = Action::new(
                    actor,
                    sample.value.to_string(),
                    ActionPayload::Number { value: sample.value },
                );
                action.fallback = sample.fallback;
                action
            }
        };
        Ok(action)
    }
}
