use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::components::{ComponentSpec, Params};
use crate::kernel::{
    Action, ActionPayload, ActionSpec, BuildError, CallContext, Component, ComponentError, ComponentKind,
    ContextBundle, OutputType,
};

/// Picks the option with the highest configured utility. Never calls the
/// language model.
#[derive(Debug, Clone)]
pub struct RationalActing {
    utilities: BTreeMap<String, f64>,
}

impl RationalActing {
    pub fn new(utilities: BTreeMap<String, f64>) -> Self {
        RationalActing { utilities }
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        Ok(RationalActing::new(Params::of(spec).number_map("utilities")?))
    }

    /// Argmax over `options`; the lowest index wins ties, and options
    /// without a utility score 0. Returns the index and the options that had
    /// no utility.
    pub fn choose(&self, options: &[String]) -> (usize, Vec<String>) {
        let mut missing = Vec::new();
        let mut best = 0;
        let mut best_value = f64::NEG_INFINITY;
        for (i, option) in options.iter().enumerate() {
            let value = match self.utilities.get(option) {
                Some(v) => *v,
                None => {
                    missing.push(option.clone());
                    0.0
                }
            };
            if value > best_value {
                best = i;
                best_value = value;
            }
        }
        (best, missing)
    }
}

impl Component for RationalActing {
    fn type_name(&self) -> &'static str {
        "rational_acting"
    }

    fn kind(&self) -> ComponentKind {
        ComponentKind::Acting
    }

    fn decide(
        &mut self,
        ctx: &mut CallContext<'_>,
        _bundle: &ContextBundle,
        spec: &ActionSpec,
    ) -> Result<Action, ComponentError> {
        if spec.output_type != OutputType::Choice {
            return Err(ComponentError::Failed("rational acting needs a choice spec".into()));
        }
        let (index, missing) = self.choose(&spec.options);
        if !missing.is_empty() {
            ctx.warn(
                "missing_utility",
                format!("no utility for {}; scored 0", missing.join(", ")),
            );
        }
        let option = spec.options[index].clone();
        Ok(Action::new(
            ctx.entity().clone(),
            option.clone(),
            ActionPayload::Choice { option, index },
        ))
    }

    fn snapshot(&self) -> Value {
        json!({ "utilities": self.utilities })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        self.utilities = serde_json::from_value(state.get("utilities").cloned().unwrap_or_default())
            .map_err(|e| ComponentError::State(e.to_string()))?;
        Ok(())
    }
}
