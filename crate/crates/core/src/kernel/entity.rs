use std::collections::{BTreeMap, HashSet};
use std::thread;

use serde_json::{json, Value};

use super::action::{Action, ActionSpec, ContextBundle, EntityId, Observation, SpecError};
use super::component::{CallContext, Component, ComponentError, ComponentKind, Env};
use crate::canonical;
use crate::trace::{TraceDraft, TraceKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("entity names must be non-empty")]
    EmptyName,
    #[error("entity `{entity}` has no acting component")]
    NoActingComponent { entity: String },
    #[error("entity `{entity}` has {} acting components ({}); exactly one is allowed", components.len(), components.join(", "))]
    MultipleActingComponents { entity: String, components: Vec<String> },
    #[error("entity `{entity}` has two components named `{name}`")]
    DuplicateComponentName { entity: String, name: String },
    #[error("unknown component type `{type_id}`")]
    UnknownComponentType { type_id: String },
    #[error("component `{component}` requires {dependency}")]
    DependencyMissing { component: String, dependency: String },
    #[error("component `{component}`: parameter `{param}`: {detail}")]
    InvalidParameter {
        component: String,
        param: String,
        detail: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CallError {
    #[error("invalid action spec: {0}")]
    InvalidSpec(#[from] SpecError),
    #[error("component `{component}` failed: {source}")]
    ComponentFailure {
        component: String,
        #[source]
        source: ComponentError,
    },
    #[error("acting component `{component}` failed: {source}")]
    ActingFailure {
        component: String,
        #[source]
        source: ComponentError,
    },
}

impl CallError {
    /// True when the failure is a run-level provider misconfiguration.
    pub fn is_fatal(&self) -> bool {
        match self {
            CallError::InvalidSpec(_) => false,
            CallError::ComponentFailure { source, .. } | CallError::ActingFailure { source, .. } => source.is_fatal(),
        }
    }
}

pub struct ComponentSlot {
    name: String,
    kind: ComponentKind,
    declared_independent: bool,
    component: Box<dyn Component>,
    ordinal: u64,
}

impl ComponentSlot {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind
    }

    pub fn declared_independent(&self) -> bool {
        self.declared_independent
    }

    pub fn component(&self) -> &dyn Component {
        self.component.as_ref()
    }
}

/// A named box of components with exactly one acting component.
pub struct Entity {
    id: EntityId,
    slots: Vec<ComponentSlot>,
    acting_index: usize,
    concurrent_preact: bool,
}

impl std::fmt::Debug for Entity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Entity")
            .field("id", &self.id)
            .field("components", &self.component_names())
            .field("acting_index", &self.acting_index)
            .finish()
    }
}

type PreactResult = (Result<Option<(String, String)>, ComponentError>, Vec<TraceDraft>);

impl Entity {
    /// Assembles an entity from named components, in registration order.
    pub fn new(id: EntityId, components: Vec<(String, Box<dyn Component>)>) -> Result<Self, BuildError> {
        let mut seen = HashSet::new();
        for (name, _) in &components {
            if !seen.insert(name.as_str()) {
                return Err(BuildError::DuplicateComponentName {
                    entity: id.to_string(),
                    name: name.clone(),
                });
            }
        }
        let acting: Vec<usize> = components
            .iter()
            .enumerate()
            .filter(|(_, (_, c))| c.kind() == ComponentKind::Acting)
            .map(|(i, _)| i)
            .collect();
        let acting_index = match acting.as_slice() {
            [] => return Err(BuildError::NoActingComponent { entity: id.to_string() }),
            [index] => *index,
            many => {
                return Err(BuildError::MultipleActingComponents {
                    entity: id.to_string(),
                    components: many.iter().map(|&i| components[i].0.clone()).collect(),
                })
            }
        };
        let slots = components
            .into_iter()
            .map(|(name, component)| ComponentSlot {
                name,
                kind: component.kind(),
                declared_independent: component.declared_independent(),
                component,
                ordinal: 0,
            })
            .collect();
        Ok(Entity {
            id,
            slots,
            acting_index,
            concurrent_preact: true,
        })
    }

    pub fn id(&self) -> &EntityId {
        &self.id
    }

    pub fn name(&self) -> &str {
        self.id.as_str()
    }

    pub fn slots(&self) -> &[ComponentSlot] {
        &self.slots
    }

    pub fn acting_index(&self) -> usize {
        self.acting_index
    }

    pub fn component_names(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.name.as_str()).collect()
    }

    /// Whether independent `pre_act`s may run on separate threads.
    /// Bundle order is registration order either way.
    pub fn set_concurrent_preact(&mut self, enabled: bool) {
        self.concurrent_preact = enabled;
    }

    /// First component of concrete type `T`.
    pub fn find<T: Component + 'static>(&self) -> Option<&T> {
        self.slots
            .iter()
            .find_map(|s| s.component.as_ref().as_any().downcast_ref::<T>())
    }

    pub fn find_mut<T: Component + 'static>(&mut self) -> Option<&mut T> {
        self.slots
            .iter_mut()
            .find_map(|s| s.component.as_mut().as_any_mut().downcast_mut::<T>())
    }

    /// Whether some context component answers requests tagged `tag`.
    pub fn answers(&self, tag: &str) -> bool {
        self.slots
            .iter()
            .any(|s| s.kind == ComponentKind::Context && s.component.answers(tag))
    }

    pub fn action_request(&self) -> Option<ActionSpec> {
        self.slots.iter().find_map(|s| s.component.action_request())
    }

    pub fn dispatch_policy(&self) -> Option<crate::components::gm::DispatchPolicy> {
        self.slots.iter().find_map(|s| s.component.dispatch_policy())
    }

    /// Runs `pre_observe` on every component, then `post_observe` on every
    /// component, each phase in registration order. A failure stops the
    /// call; components that already ran keep their updates.
    pub fn observe(&mut self, env: &Env<'_>, obs: &Observation, out: &mut Vec<TraceDraft>) -> Result<(), CallError> {
        for phase in [Phase::PreObserve, Phase::PostObserve] {
            for slot in &mut self.slots {
                let ComponentSlot {
                    name,
                    component,
                    ordinal,
                    ..
                } = slot;
                let mut ctx = CallContext::new(env, &self.id, name, ordinal);
                let result = match phase {
                    Phase::PreObserve => component.pre_observe(&mut ctx, obs),
                    Phase::PostObserve => component.post_observe(&mut ctx, obs),
                };
                out.extend(ctx.into_drafts());
                result.map_err(|source| CallError::ComponentFailure {
                    component: name.clone(),
                    source,
                })?;
            }
        }
        Ok(())
    }

    /// Context components run `pre_act`; the acting component (or the
    /// context component answering the spec's tag) decides; then every
    /// component runs `post_act`.
    pub fn act(&mut self, env: &Env<'_>, spec: &ActionSpec, out: &mut Vec<TraceDraft>) -> Result<Action, CallError> {
        spec.validate()?;
        let mut spec = spec.clone();
        spec.call_to_action = spec.render_call(self.id.as_str());

        let bundle = self.run_preacts(env, &spec, out)?;
        out.push(TraceDraft::new(
            TraceKind::Context,
            self.id.as_str(),
            json!({"tag": spec.tag, "entries": bundle.entries}),
        ));

        let responder = spec
            .tag
            .as_deref()
            .and_then(|tag| {
                self.slots
                    .iter()
                    .position(|s| s.kind == ComponentKind::Context && s.component.answers(tag))
            })
            .unwrap_or(self.acting_index);
        let action = {
            let ComponentSlot {
                name,
                component,
                ordinal,
                ..
            } = &mut self.slots[responder];
            let mut ctx = CallContext::new(env, &self.id, name, ordinal);
            let decided = component.decide(&mut ctx, &bundle, &spec);
            out.extend(ctx.into_drafts());
            let mut action = decided.map_err(|source| CallError::ActingFailure {
                component: name.clone(),
                source,
            })?;
            action.actor = self.id.clone();
            action.spec_tag = spec.tag.clone();
            if !action.conforms_to(&spec) {
                return Err(CallError::ActingFailure {
                    component: name.clone(),
                    source: ComponentError::Failed(format!(
                        "answer `{}` does not conform to the {:?} spec",
                        action.raw_text, spec.output_type
                    )),
                });
            }
            action
        };

        for slot in &mut self.slots {
            let ComponentSlot {
                name,
                component,
                ordinal,
                ..
            } = slot;
            let mut ctx = CallContext::new(env, &self.id, name, ordinal);
            let result = component.post_act(&mut ctx, &spec, &action);
            out.extend(ctx.into_drafts());
            result.map_err(|source| CallError::ComponentFailure {
                component: name.clone(),
                source,
            })?;
        }
        Ok(action)
    }

    fn run_preacts(
        &mut self,
        env: &Env<'_>,
        spec: &ActionSpec,
        out: &mut Vec<TraceDraft>,
    ) -> Result<ContextBundle, CallError> {
        let mut bundle = ContextBundle::new();
        let concurrent = self.concurrent_preact;
        let Entity { id, slots, .. } = self;
        let id: &EntityId = id;
        let mut i = 0;
        while i < slots.len() {
            if slots[i].kind == ComponentKind::Acting {
                i += 1;
                continue;
            }
            let mut end = i + 1;
            if concurrent && slots[i].declared_independent {
                while end < slots.len() && slots[end].kind == ComponentKind::Context && slots[end].declared_independent
                {
                    end += 1;
                }
            }
            let group = &mut slots[i..end];
            let results: Vec<PreactResult> = if group.len() == 1 {
                vec![run_preact(env, id, &mut group[0], spec, &bundle)]
            } else {
                let prior = &bundle;
                thread::scope(|scope| {
                    let handles: Vec<_> = group
                        .iter_mut()
                        .map(|slot| scope.spawn(move || run_preact(env, id, slot, spec, prior)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().unwrap_or_else(|panic| std::panic::resume_unwind(panic)))
                        .collect()
                })
            };
            for (offset, (result, drafts)) in results.into_iter().enumerate() {
                out.extend(drafts);
                let name = &slots[i + offset].name;
                match result {
                    Ok(Some((label, text))) => bundle.push(name.clone(), label, text),
                    Ok(None) => {}
                    Err(source) => {
                        return Err(CallError::ComponentFailure {
                            component: name.clone(),
                            source,
                        })
                    }
                }
            }
            i = end;
        }
        Ok(bundle)
    }

    /// Component name → serialized state.
    pub fn snapshot(&self) -> BTreeMap<String, Value> {
        self.slots
            .iter()
            .map(|s| (s.name.clone(), s.component.snapshot()))
            .collect()
    }

    /// Canonical JSON of [`Entity::snapshot`].
    pub fn snapshot_json(&self) -> String {
        canonical::to_string(&self.snapshot()).expect("snapshots serialize")
    }

    pub fn restore(&mut self, state: &BTreeMap<String, Value>) -> Result<(), CallError> {
        for slot in &mut self.slots {
            let value = state.get(&slot.name).ok_or_else(|| CallError::ComponentFailure {
                component: slot.name.clone(),
                source: ComponentError::State("missing from snapshot".into()),
            })?;
            slot.component
                .restore(value)
                .map_err(|source| CallError::ComponentFailure {
                    component: slot.name.clone(),
                    source,
                })?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Phase {
    PreObserve,
    PostObserve,
}

fn run_preact(
    env: &Env<'_>,
    id: &EntityId,
    slot: &mut ComponentSlot,
    spec: &ActionSpec,
    prior: &ContextBundle,
) -> PreactResult {
    let ComponentSlot {
        name,
        component,
        ordinal,
        ..
    } = slot;
    let mut ctx = CallContext::new(env, id, name, ordinal);
    let result = component.pre_act(&mut ctx, spec, prior);
    (result, ctx.into_drafts())
}
