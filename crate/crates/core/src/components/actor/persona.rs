use serde_json::{json, Value};

use crate::components::{ComponentSpec, Params};
use crate::kernel::{ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle};

/// Fixed identity text, served verbatim under "Identity".
#[derive(Debug, Clone)]
pub struct Persona {
    text: String,
}

impl Persona {
    pub fn new(text: impl Into<String>) -> Result<Self, BuildError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(BuildError::InvalidParameter {
                component: "persona".into(),
                param: "text".into(),
                detail: "required and must be non-empty".into(),
            });
        }
        Ok(Persona { text })
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        Ok(Persona {
            text: Params::of(spec).required_string("text")?,
        })
    }
}

impl Component for Persona {
    fn type_name(&self) -> &'static str {
        "persona"
    }

    fn declared_independent(&self) -> bool {
        true
    }

    fn pre_act(
        &mut self,
        _ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        _prior: &ContextBundle,
    ) -> Result<Option<(String, String)>, ComponentError> {
        Ok(Some(("Identity".into(), self.text.clone())))
    }

    fn snapshot(&self) -> Value {
        json!({ "text": self.text })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        self.text = state
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| ComponentError::State("persona.text".into()))?
            .to_string();
        Ok(())
    }
}
