use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{RESOLVE_TAG, SCORE_TAG};
use crate::components::{ComponentSpec, Params};
use crate::kernel::{Action, ActionSpec, BuildError, CallContext, Component, ComponentError};
use crate::trace::TraceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricMode {
    /// The provider rates each actor between 0 and 1.
    #[default]
    Provider,
    /// 1 iff the actor's latest attempt is a highest-utility option.
    MaxUtility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricScore {
    pub entity: String,
    pub step: u64,
    pub value: f64,
    pub rationale: String,
}

/// Scores every actor after each resolved event and emits `score` records.
#[derive(Debug, Clone, Default)]
pub struct RubricScorer {
    enabled: bool,
    rubric: String,
    mode: RubricMode,
    utilities: BTreeMap<String, f64>,
    scores: Vec<RubricScore>,
    last_attempts: BTreeMap<String, String>,
}

impl RubricScorer {
    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BuildError> {
        let params = Params::of(spec);
        let scorer = RubricScorer {
            enabled: params.bool_or("enabled", true)?,
            rubric: params.string_or("rubric", "Act well.")?,
            mode: params.parse("mode")?,
            utilities: params.number_map("utilities")?,
            ..Self::default()
        };
        if scorer.mode == RubricMode::MaxUtility && scorer.utilities.is_empty() {
            return Err(BuildError::InvalidParameter {
                component: spec.name.clone(),
                param: "utilities".into(),
                detail: "max_utility scoring needs utilities".into(),
            });
        }
        Ok(scorer)
    }

    pub fn scores(&self) -> &[RubricScore] {
        &self.scores
    }

    /// Per-entity (sum, count).
    pub fn totals(&self) -> BTreeMap<String, (f64, u64)> {
        let mut totals = BTreeMap::new();
        for score in &self.scores {
            let entry = totals.entry(score.entity.clone()).or_insert((0.0, 0));
            entry.0 += score.value;
            entry.1 += 1;
        }
        totals
    }

    fn max_utility_score(&self, actor: &str) -> (f64, String) {
        let Some(attempt) = self.last_attempts.get(actor) else {
            return (0.0, "no attempt yet".into());
        };
        let best = self.utilities.values().cloned().fold(f64::NEG_INFINITY, f64::max);
        let utility = self
            .utilities
            .iter()
            .find(|(option, _)| option.eq_ignore_ascii_case(attempt.trim()))
            .map(|(_, u)| *u);
        match utility {
            Some(u) if u == best => (1.0, format!("`{attempt}` has the highest utility")),
            Some(_) => (0.0, format!("`{attempt}` is not the best option")),
            None => (0.0, format!("`{attempt}` is not a scored option")),
        }
    }
}

impl Component for RubricScorer {
    fn type_name(&self) -> &'static str {
        "rubric_scorer"
    }

    fn post_act(
        &mut self,
        ctx: &mut CallContext<'_>,
        spec: &ActionSpec,
        action: &Action,
    ) -> Result<(), ComponentError> {
        if !self.enabled || spec.tag() != Some(RESOLVE_TAG) {
            return Ok(());
        }
        if let (Some(actor), Some(attempt)) = (spec.param("actor"), spec.param("attempt")) {
            self.last_attempts.insert(actor.to_string(), attempt.to_string());
        }
        let roster: Vec<String> = ctx.roster().iter().map(|e| e.to_string()).collect();
        for actor in roster {
            if actor == ctx.entity().as_str() {
                continue;
            }
            let (value, rationale) = match self.mode {
                RubricMode::MaxUtility => self.max_utility_score(&actor),
                RubricMode::Provider => {
                    let prompt = format!(
                        "Rubric: {}\nEvent: {}\nHow well does {actor}'s conduct so far satisfy the rubric? Give a score between 0 and 1.",
                        self.rubric,
                        action.text()
                    );
                    let sample = ctx.sample_float(prompt, SCORE_TAG, Some(&actor))?;
                    let clamped = sample.value.clamp(0.0, 1.0);
                    if clamped != sample.value {
                        ctx.warn(
                            "score_clamped",
                            format!("{} for {actor} clamped to {clamped}", sample.value),
                        );
                    }
                    (clamped, self.rubric.clone())
                }
            };
            let score = RubricScore {
                entity: actor,
                step: ctx.step(),
                value,
                rationale,
            };
            ctx.emit(TraceKind::Score, serde_json::to_value(&score).unwrap_or_default());
            self.scores.push(score);
        }
        Ok(())
    }

    fn snapshot(&self) -> Value {
        json!({ "scores": self.scores, "last_attempts": self.last_attempts })
    }

    fn restore(&mut self, state: &Value) -> Result<(), ComponentError> {
        self.scores = serde_json::from_value(state.get("scores").cloned().unwrap_or(json!([])))
            .map_err(|e| ComponentError::State(e.to_string()))?;
        self.last_attempts = serde_json::from_value(state.get("last_attempts").cloned().unwrap_or(json!({})))
            .map_err(|e| ComponentError::State(e.to_string()))?;
        Ok(())
    }
}
