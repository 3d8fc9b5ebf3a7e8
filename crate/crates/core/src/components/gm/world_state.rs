use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{RESOLVE_TAG, STATE_DELTA_TAG};
use crate::components::{ComponentSpec, Params};
use crate::kernel::{Action, ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldFact {
    pub key: String,
    pub value: String,
    pub set_at: u64,
    pub set_by: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DeltaSource {
    #[default]
    None,
    Provider,
    Scripted,
}

/// Key/value world facts with full history; the latest write per key wins.
///
/// After each resolved event, deltas come from the provider (`key: value`
/// lines) or from deltas scripted per step.
#[derive(Debug, Clone, Default)]
pub struct WorldState {
    facts: Vec<WorldFact>,
    source: DeltaSource,
    scripted: BTreeMap<u64, String>,
    applied_steps: Vec<u64>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        let params = Params::of(spec);
        let source = params.parse::<DeltaSource>("delta_source")?;
        let scripted_raw: BTreeMap<String, String> = params.parse("scripted_deltas")?;
        let mut scripted = BTreeMap::new();
        for (step, delta) in scripted_raw {
            let step: u64 = step.parse().map_err(|_| BuildError::InvalidParameter {
                component: spec.name.clone(),
                param: "scripted_deltas".into(),
                detail: format!("`{step}` is not a step number"),
            })?;
            scripted.insert(step, delta);
        }
        let initial: BTreeMap<String, String> = params.parse("initial")?;
        let mut state = WorldState {
            source,
            scripted,
            ..Self::default()
        };
        for (key, value) in initial {
            state.set(key, value, 0, "scenario");
        }
        Ok(state)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>, set_at: u64, set_by: impl Into<String>) {
        self.facts.push(WorldFact {
            key: key.into(),
            value: value.into(),
            set_at,
            set_by: set_by.into(),
        });
    }

    /// Applies `key: value` lines; returns the lines that were malformed.
    /// Blank lines and a bare `none` are skipped.
    pub fn apply_delta(&mut self, delta: &str, set_at: u64, set_by: &str) -> Vec<String> {
        let mut malformed = Vec::new();
        for line in delta.lines() {
            let line = line.trim().trim_start_matches("- ");
            if line.is_empty() || line.eq_ignore_ascii_case("none") {
                continue;
            }
            match line.split_once(':') {
                Some((key, value)) if !key.trim().is_empty() && !value.trim().is_empty() => {
                    self.set(key.trim(), value.trim(), set_at, set_by)
                }
                _ => malformed.push(line.to_string()),
            }
        }
        malformed
    }

    /// Value of the last write to `key`.
    pub fn latest(&self, key: &str) -> Option<&str> {
        self.facts.iter().rev().find(|f| f.key == key).map(|f| f.value.as_str())
    }

    pub fn history(&self, key: &str) -> Vec<&WorldFact> {
        self.facts.iter().filter(|f| f.key == key).collect()
    }

    pub fn facts(&self) -> &[WorldFact] {
        &self.facts
    }

    /// Latest value per key, sorted by key.
    pub fn current(&self) -> BTreeMap<&str, &str> {
        let mut current = BTreeMap::new();
        for fact in &self.facts {
            current.insert(fact.key.as_str(), fact.value.as_str());
        }
        current
    }

    pub fn render(&self) -> String {
        let current = self.current();
        if current.is_empty() {
            return "(none)".to_string();
        }
        current
            .into_iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn apply_and_warn(&mut self, ctx: &mut CallContext<'_>, delta: &str, set_by: &str) {
        for line in self.apply_delta(delta, ctx.sim_time(), set_by) {
            ctx.warn("malformed_delta", format!("ignored `{line}`"));
        }
    }
}

impl Component for WorldState {
    fn type_name(&self) -> &'static str {
        "world_state"
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
        Ok(Some(("World state".into(), self.render())))
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
        let set_by = spec.param("actor").unwrap_or(ctx.entity().as_str()).to_string();
        match self.source {
            DeltaSource::None => {}
            DeltaSource::Scripted => {
                let step = ctx.step();
                if !self.applied_steps.contains(&step) {
                    self.applied_steps.push(step);
                    if let Some(delta) = self.scripted.get(&step).cloned() {
                        self.apply_and_warn(ctx, &delta, &set_by);
                    }
                }
            }
            DeltaSource::Provider => {
                let prompt = format!(
                    "Current world state:\n{}\nEvent: {}\nList every change to the world state caused by this event, one `key: value` per line. Answer `none` if nothing changed.",
                    self.render(),
                    action.text()
                );
                match ctx.sample_text(prompt, STATE_DELTA_TAG, None) {
                    Ok(delta) => self.apply_and_warn(ctx, &delta, &set_by),
                    Err(e) if e.is_fatal() => return Err(e.into()),
                    Err(e) => ctx.warn("state_delta_failed", e.to_string()),
                }
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> Value {
        json!({ "facts": self.facts })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        self.facts = serde_json::from_value(state.get("facts").cloned().unwrap_or_default())
            .map_err(|e| ComponentError::State(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_write_wins_with_history() {
        let mut state = WorldState::new();
        state.apply_delta("door: open", 0, "GM");
        state.apply_delta("door: closed", 1, "GM");
        assert_eq!(state.latest("door"), Some("closed"));
        assert_eq!(state.history("door").len(), 2);
        assert!(state.render().contains("door: closed"));
    }

    #[test]
    fn render_sorted_and_empty() {
        let mut state = WorldState::new();
        assert_eq!(state.render(), "(none)");
        state.apply_delta("zebra: 1\napple: 2", 0, "GM");
        assert_eq!(state.render(), "apple: 2\nzebra: 1");
    }

    #[test]
    fn malformed_lines_reported() {
        let mut state = WorldState::new();
        let bad = state.apply_delta("none\n\nno colon here\n: empty key\nok: yes", 0, "GM");
        assert_eq!(bad, vec!["no colon here", ": empty key"]);
        assert_eq!(state.latest("ok"), Some("yes"));
    }
}
