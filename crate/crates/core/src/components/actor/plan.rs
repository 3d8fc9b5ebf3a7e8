use serde_json::{json, Value};

use crate::components::{ComponentSpec, Params};
use crate::kernel::{
    Action, ActionSpec, BuildError, CallContext, Component, ComponentError, ContextBundle, Observation,
};

/// Cached plan, regenerated after acting every `interval` steps or when the
/// latest observation contains the trigger phrase.
#[derive(Debug, Clone)]
pub struct Plan {
    interval: u64,
    trigger: Option<String>,
    goal: Option<String>,
    plan: Option<String>,
    last_refresh: Option<u64>,
    triggered: bool,
}

impl Plan {
    pub fn new(interval: u64, trigger: Option<String>, goal: Option<String>) -> Self {
        assert!(interval > 0, "plan interval must be positive");
        Plan {
            interval,
            trigger: trigger.filter(|t| !t.is_empty()),
            goal,
            plan: None,
            last_refresh: None,
            triggered: false,
        }
    }

    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        let params = Params::of(spec);
        Ok(Plan::new(
            params.positive_u64_or("interval", 5)?,
            params.string("trigger")?,
            params.string("goal")?,
        ))
    }

    pub fn current(&self) -> Option<&str> {
        self.plan.as_deref()
    }

    fn due(&self, step: u64) -> bool {
        self.triggered
            || match self.last_refresh {
                None => true,
                Some(last) => step.saturating_sub(last) >= self.interval,
            }
    }
}

impl Component for Plan {
    fn type_name(&self) -> &'static str {
        "plan"
    }

    fn pre_observe(&mut self, _ctx: &mut CallContext<'_>, obs: &Observation) -> Result<(), ComponentError> {
        if let Some(trigger) = &self.trigger {
            self.triggered = obs.text.contains(trigger.as_str());
        }
        Ok(())
    }

    fn pre_act(
        &mut self,
        _ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        _prior: &ContextBundle,
    ) -> Result<Option<(String, String)>, ComponentError> {
        let text = self.plan.clone().unwrap_or_else(|| "(no plan yet)".to_string());
        Ok(Some(("Current plan".into(), text)))
    }

    fn post_act(
        &mut self,
        ctx: &mut CallContext<'_>,
        _spec: &ActionSpec,
        action: &Action,
    ) -> Result<(), ComponentError> {
        let step = ctx.step();
        if !self.due(step) {
            return Ok(());
        }
        let mut prompt = String::new();
        if let Some(goal) = &self.goal {
            prompt.push_str(&format!("Goal: {goal}\n"));
        }
        if let Some(plan) = &self.plan {
            prompt.push_str(&format!("Previous plan: {plan}\n"));
        }
        prompt.push_str(&format!(
            "Last action: {}\nWrite a short plan for {} for the next few steps.",
            action.text(),
            ctx.entity()
        ));
        match ctx.sample_text(prompt, "plan", None) {
            Ok(plan) => {
                self.plan = Some(plan);
                self.last_refresh = Some(step);
                self.triggered = false;
                Ok(())
            }
            Err(e) if e.is_fatal() => Err(e.into()),
            Err(e) => {
                ctx.warn("plan_refresh_failed", format!("keeping previous plan: {e}"));
                Ok(())
            }
        }
    }

    fn snapshot(&self) -> Value {
        json!({
            "interval": self.interval,
            "last_refresh": self.last_refresh,
            "plan": self.plan,
            "triggered": self.triggered,
        })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        self.plan = state.get("plan").and_then(Value::as_str).map(str::to_string);
        self.last_refresh = state.get("last_refresh").and_then(Value::as_u64);
        self.triggered = state.get("triggered").and_then(Value::as_bool).unwrap_or(false);
        if let Some(interval) = state.get("interval").and_then(Value::as_u64).filter(|&i| i > 0) {
            self.interval = interval;
        }
        Ok(())
    }
}
