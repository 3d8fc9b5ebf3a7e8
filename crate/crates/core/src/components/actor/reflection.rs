use serde_json::{json, Value};

use super::memory::SharedMemory;
use crate::components::{BuildContext, ComponentSpec, Params};
use crate::kernel::{ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle};

pub const REFLECTION_QUESTION: &str = "What kind of person am I?";

/// Asks the model who the entity is, given its most relevant memories, and
/// feeds the answer to later components. The answer is also remembered.
///
/// Not independent: later components may read its bundle entry.
pub struct SelfReflection {
    memory: SharedMemory,
    recall: usize,
    last: Option<String>,
}

impl SelfReflection {
    pub fn new(memory: SharedMemory, recall: usize) -> Self {
        SelfReflection {
            memory,
            recall,
            last: None,
        }
    }

    pub fn from_spec(spec: &ComponentSpec, ctx: &mut BuildContext<'_>) -> Result<Self, BuildError> {
        let memory = ctx.memory.clone().ok_or_else(|| BuildError::DependencyMissing {
            component: spec.name.clone(),
            dependency: "an associative_memory component on the same entity".into(),
        })?;
        let recall = Params::of(spec).positive_u64_or("recall", 3)? as usize;
        Ok(SelfReflection::new(memory, recall))
    }

    pub fn prompt(&self, now: u64) -> String {
        let memories = self.memory.lock().retrieve(REFLECTION_QUESTION, self.recall, now);
        let mut prompt = String::from("Memories:\n");
        if memories.is_empty() {
            prompt.push_str("(none)\n");
        }
        for record in memories {
            prompt.push_str("- ");
            prompt.push_str(&record.text);
            prompt.push('\n');
        }
        prompt.push_str(REFLECTION_QUESTION);
        prompt
    }
}

impl Component for SelfReflection {
    fn type_name(&self) -> &'static str {
        "self_reflection"
    }

    fn pre_act(
        &mut self,
        ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        _prior: &ContextBundle,
    ) -> Result<Option<(String, String)>, ComponentError> {
        let prompt = self.prompt(ctx.sim_time());
        let answer = ctx.sample_text(prompt, "reflection", None)?;
        self.memory.lock().add(answer.clone(), ctx.sim_time(), &["reflection"]);
        self.last = Some(answer.clone());
        Ok(Some(("Self reflection".into(), answer)))
    }

    fn snapshot(&self) -> Value {
        json!({ "last": self.last, "recall": self.recall })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        self.last = state.get("last").and_then(Value::as_str).map(str::to_string);
        if let Some(recall) = state.get("recall").and_then(Value::as_u64) {
            self.recall = recall as usize;
        }
        Ok(())
    }
}
