//! Game Master components: the pieces that make an ordinary entity act as
//! the environment.
//!
//! The GM's acting component is the [`EventResolver`]. The other
//! question-answering components are context components that answer
//! requests with a specific tag (see the `*_TAG` constants), so every GM
//! behavior still runs through the entity's act/observe lifecycle.

mod director;
mod dispatcher;
mod next_acting;
mod resolver;
mod scheduler;
mod scorer;
mod terminator;
mod world_state;

use serde::{Deserialize, Serialize};

pub use director::{NarrativeDirector, PlotBeat};
pub use dispatcher::{perceive_spec, ObservationDispatcher};
pub use next_acting::NextActing;
pub use resolver::{resolve_spec, EventResolver};
pub use scheduler::{rule_wake_time, Scheduler, SchedulerMode};
pub use scorer::{RubricMode, RubricScore, RubricScorer};
pub use terminator::{termination_spec, Terminator, TERMINATION_QUESTION};
pub use world_state::{WorldFact, WorldState};

use super::ComponentRegistry;
use crate::kernel::{Action, ActionPayload, EntityId};
use crate::lm::ChoiceSample;

pub const RESOLVE_TAG: &str = "resolve";
pub const NEXT_ACTING_TAG: &str = "next_acting";
pub const TERMINATE_TAG: &str = "terminate";
pub const PERCEIVE_TAG: &str = "perceive";
pub const NEXT_WAKE_TAG: &str = "next_wake";
pub const SCORE_TAG: &str = "score";
pub const STATE_DELTA_TAG: &str = "state_delta";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    /// Every entity observes the event text.
    #[default]
    Broadcast,
    /// Each entity observes the GM's answer to "what does X perceive".
    Asymmetric,
}

/// Facts only `holder` may ever observe, delivered at the given steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretKnowledge {
    pub holder: String,
    pub facts: Vec<String>,
    #[serde(default = "default_secret_steps")]
    pub steps: Vec<u64>,
}

fn default_secret_steps() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DispatchPolicy {
    pub mode: DispatchMode,
    #[serde(default)]
    pub secrets: Vec<SecretKnowledge>,
}

impl DispatchPolicy {
    /// Secret facts for `holder` at `step`, joined for appending to an
    /// observation.
    pub fn secrets_for(&self, holder: &str, step: u64) -> Option<String> {
        let facts: Vec<&str> = self
            .secrets
            .iter()
            .filter(|s| s.holder == holder && s.steps.contains(&step))
            .flat_map(|s| s.facts.iter().map(String::as_str))
            .collect();
        if facts.is_empty() {
            None
        } else {
            Some(facts.join("\n"))
        }
    }
}

fn choice_action(actor: EntityId, sample: ChoiceSample) -> Action {
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

pub(crate) fn register(registry: &mut ComponentRegistry) {
    registry.register("event_resolver", |spec, _| {
        Ok(Box::new(EventResolver::from_spec(spec)?))
    });
    registry.register("world_state", |spec, _| Ok(Box::new(WorldState::from_spec(spec)?)));
    registry.register("next_acting", |spec, _| Ok(Box::new(NextActing::from_spec(spec)?)));
    registry.register("observation_dispatcher", |spec, _| {
        Ok(Box::new(ObservationDispatcher::from_spec(spec)?))
    });
    registry.register("terminator", |spec, _| Ok(Box::new(Terminator::from_spec(spec)?)));
    registry.register("narrative_director", |spec, _| {
        Ok(Box::new(NarrativeDirector::from_spec(spec)?))
    });
    registry.register("scheduler", |spec, _| Ok(Box::new(Scheduler::from_spec(spec)?)));
    registry.register("rubric_scorer", |spec, _| Ok(Box::new(RubricScorer::from_spec(spec)?)));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secrets_only_for_holder_and_step() {
        let policy = DispatchPolicy {
            mode: DispatchMode::Asymmetric,
            secrets: vec![SecretKnowledge {
                holder: "Ada".into(),
                facts: vec!["The key is under the mat.".into()],
                steps: vec![2],
            }],
        };
        assert_eq!(
            policy.secrets_for("Ada", 2).as_deref(),
            Some("The key is under the mat.")
        );
        assert_eq!(policy.secrets_for("Ada", 1), None);
        assert_eq!(policy.secrets_for("Bo", 2), None);
    }
}
