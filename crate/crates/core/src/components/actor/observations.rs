use std::collections::VecDeque;

use serde_json::{json, Value};

use crate::components::{ComponentSpec, Params};
use crate::kernel::{ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle, Observation};

pub const DEFAULT_CAPACITY: u64 = 50;

/// The most recent observations, oldest first, bounded by `capacity`.
#[derive(Debug, Clone)]
pub struct ObservationBuffer {
    capacity: usize,
    entries: VecDeque<String>,
}

impl ObservationBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "observation buffer capacity must be positive");
        ObservationBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        let capacity = Params::of(spec).positive_u64_or("capacity", DEFAULT_CAPACITY)?;
        Ok(ObservationBuffer::new(capacity as usize))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn push(&mut self, text: impl Into<String>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(text.into());
    }

    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            "(none)".to_string()
        } else {
            self.entries.iter().map(String::as_str).collect::<Vec<_>>().join("\n")
        }
    }
}

impl Component for ObservationBuffer {
    fn type_name(&self) -> &'static str {
        "observation_buffer"
    }

    fn declared_independent(&self) -> bool {
        true
    }

    fn pre_observe(&mut self, _ctx: &mut CallContext<'_>, obs: &Observation) -> Result<(), ComponentError> {
        self.push(obs.text.clone());
        Ok(())
    }

    fn pre_act(
        &mut self,
        _ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        _prior: &ContextBundle,
    ) -> Result<Option<(String, String)>, ComponentError> {
        Ok(Some(("Recent observations".into(), self.render())))
    }

    fn snapshot(&self) -> Value {
        json!({ "capacity": self.capacity, "observations": self.entries })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        let capacity = state
            .get("capacity")
            .and_then(Value::as_u64)
            .filter(|&c| c > 0)
            .ok_or_else(|| ComponentError::State("observation_buffer.capacity".into()))?;
        let observations: Vec<String> = serde_json::from_value(state.get("observations").cloned().unwrap_or_default())
            .map_err(|e| ComponentError::State(e.to_string()))?;
        self.capacity = capacity as usize;
        self.entries = observations.into_iter().collect();
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_the_last_k_in_order() {
        let mut buffer = ObservationBuffer::new(2);
        for text in ["a", "b", "c"] {
            buffer.push(text);
        }
        assert_eq!(buffer.render(), "b\nc");
    }

    #[test]
    fn empty_renders_none() {
        assert_eq!(ObservationBuffer::new(3).render(), "(none)");
    }

    #[test]
    fn thousand_observations_slice_oracle() {
        let mut buffer = ObservationBuffer::new(50);
        let all: Vec<String> = (0..1000).map(|i| format!("obs {i}")).collect();
        for text in &all {
            buffer.push(text.clone());
        }
        let expected = all[all.len() - 50..].join("\n");
        assert_eq!(buffer.render(), expected);
        assert_eq!(buffer.render().lines().count(), 50);
    }
}
