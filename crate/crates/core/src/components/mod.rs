//! Built-in component library and the registry that builds entities from
//! declarative component specs.

pub mod actor;
pub mod gm;
mod params;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::kernel::{BuildError, Component, Entity, EntityId};
use actor::{HumanInput, SharedMemory};

pub use params::Params;

/// One component of an entity, as written in a prefab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub type_id: String,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

impl ComponentSpec {
    pub fn new(name: impl Into<String>, type_id: impl Into<String>) -> Self {
        ComponentSpec {
            name: name.into(),
            type_id: type_id.into(),
            params: Map::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }
}

/// Things the host supplies to components at build time.
#[derive(Clone, Default)]
pub struct Resources {
    pub human_input: Option<Arc<dyn HumanInput>>,
}

/// Per-entity state shared between factories while one entity is built.
pub struct BuildContext<'a> {
    pub entity: &'a EntityId,
    pub resources: &'a Resources,
    /// The entity's memory store, present iff an `associative_memory`
    /// component is among its specs.
    pub memory: Option<SharedMemory>,
}

pub type Factory =
    Arc<dyn Fn(&ComponentSpec, &mut BuildContext<'_>) -> Result<Box<dyn Component>, BuildError> + Send + Sync>;

/// Component type id → factory.
#[derive(Clone)]
pub struct ComponentRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for ComponentRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ComponentRegistry {
    pub fn empty() -> Self {
        ComponentRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registry with every shipped component type.
    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        actor::register(&mut registry);
        gm::register(&mut registry);
        registry
    }

    pub fn register<F>(&mut self, type_id: impl Into<String>, factory: F)
    where
        F: Fn(&ComponentSpec, &mut BuildContext<'_>) -> Result<Box<dyn Component>, BuildError> + Send + Sync + 'static,
    {
        self.factories.insert(type_id.into(), Arc::new(factory));
    }

    pub fn contains(&self, type_id: &str) -> bool {
        self.factories.contains_key(type_id)
    }

    pub fn type_ids(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    /// Builds an entity with its components in the given order.
    pub fn build_entity(
        &self,
        name: &str,
        specs: &[ComponentSpec],
        resources: &Resources,
    ) -> Result<Entity, BuildError> {
        let id = EntityId::new(name).map_err(|_| BuildError::EmptyName)?;
        let memory = match specs.iter().find(|s| s.type_id == actor::MEMORY_TYPE) {
            Some(spec) => Some(actor::AssociativeMemory::shared_from_spec(spec)?),
            None => None,
        };
        let mut ctx = BuildContext {
            entity: &id,
            resources,
            memory,
        };
        let mut components = Vec::with_capacity(specs.len());
        for spec in specs {
            let factory = self
                .factories
                .get(&spec.type_id)
                .ok_or_else(|| BuildError::UnknownComponentType {
                    type_id: spec.type_id.clone(),
                })?;
            components.push((spec.name.clone(), factory(spec, &mut ctx)?));
        }
        Entity::new(id, components)
    }
}
