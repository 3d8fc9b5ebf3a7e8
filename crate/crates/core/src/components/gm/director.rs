use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::RESOLVE_TAG;
use crate::components::{ComponentSpec, Params};
use crate::kernel::{Action, ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle};

/// One planned story beat. It is consumed once a resolved event mentions
/// `keyword`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotBeat {
    pub text: String,
    pub keyword: String,
    #[serde(default)]
    pub earliest_step: u64,
}

/// Steers the GM's resolutions through an ordered list of beats.
#[derive(Debug, Clone, Default)]
pub struct NarrativeDirector {
    beats: Vec<PlotBeat>,
    guidance: String,
    cursor: usize,
}

impl NarrativeDirector {
    pub fn new(beats: Vec<PlotBeat>) -> Self {
        NarrativeDirector {
            beats,
            guidance: String::new(),
            cursor: 0,
        }
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        let params = Params::of(spec);
        let mut director = NarrativeDirector::new(params.parse("beats")?);
        director.guidance = params.string_or("guidance", "")?;
        Ok(director)
    }

    /// The beat being steered toward at `step`, if any.
    pub fn current(&self, step: u64) -> Option<&PlotBeat> {
        self.beats.get(self.cursor).filter(|b| b.earliest_step <= step)
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }
}

impl Component for NarrativeDirector {
    fn type_name(&self) -> &'static str {
        "narrative_director"
    }

    fn declared_independent(&self) -> bool {
        true
    }

    fn pre_act(
        &mut self,
        ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        _prior: &ContextBundle,
    ) -> Result<Option<(String, String)>, ComponentError> {
        let mut text = match self.current(ctx.step()) {
            Some(beat) => format!("Steer events toward: {}", beat.text),
            None => "(free play)".to_string(),
        };
        if !self.guidance.is_empty() {
            text.push('\n');
            text.push_str(&self.guidance);
        }
        Ok(Some(("Narrative direction".into(), text)))
    }

    fn post_act(
        &mut self,
        ctx: &mut CallContext<'_>,
        spec: &ActionSpec,
        action: &Action,
    ) -> Result<(), ComponentError> {
        if spec.tag() != Some(RESOLVE_TAG) {
            return Ok(());
        }
        if let Some(beat) = self.current(ctx.step()) {
            if action.text().to_lowercase().contains(&beat.keyword.to_lowercase()) {
                self.cursor += 1;
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> Value {
        json!({ "beats": self.beats, "cursor": self.cursor, "guidance": self.guidance })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        self.cursor = state.get("cursor").and_then(Value::as_u64).unwrap_or(0) as usize;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beat(text: &str, keyword: &str, earliest_step: u64) -> PlotBeat {
        PlotBeat {
            text: text.into(),
            keyword: keyword.into(),
            earliest_step,
        }
    }

    #[test]
    fn beats_are_gated_by_step() {
        let director = NarrativeDirector::new(vec![beat("the storm breaks", "storm", 2)]);
        assert!(director.current(0).is_none());
        assert_eq!(director.current(2).map(|b| b.keyword.as_str()), Some("storm"));
    }
}
