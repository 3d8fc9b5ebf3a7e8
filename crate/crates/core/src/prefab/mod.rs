//! Prefabs (declarative, cloneable component collections) and scenario
//! documents.
//!
//! A prefab lists component specs whose parameter values may be
//! `{"$param": "key"}` references into the prefab's parameter schema.
//! Overrides replace parameter values one key at a time; changing the
//! component list means defining a new prefab.

mod catalog;
mod scenario;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::components::{ComponentRegistry, ComponentSpec, Resources};
use crate::kernel::{BuildError, Entity};

pub use catalog::builtin_prefabs;
pub use scenario::{
    instantiate, validate, EntitySlot, Instance, Issue, ProviderConfig, ScenarioDoc, ScenarioError, Severity,
    ValidationReport, SCENARIO_VERSION,
};

pub const PARAM_REF: &str = "$param";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefabRole {
    Actor,
    Gm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Object,
    Array,
    Any,
}

impl ParamType {
    /// Whether `value` has this type. Null never matches.
    pub fn accepts(self, value: &Value) -> bool {
        match self {
            ParamType::String => value.is_string(),
            ParamType::Integer => value.is_u64() || value.is_i64(),
            ParamType::Number => value.is_number(),
            ParamType::Boolean => value.is_boolean(),
            ParamType::Object => value.is_object(),
            ParamType::Array => value.is_array(),
            ParamType::Any => !value.is_null(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDecl {
    #[serde(rename = "type")]
    pub ty: ParamType,
    /// Absent means the parameter is required.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

impl ParamDecl {
    pub fn required(ty: ParamType) -> Self {
        ParamDecl {
            ty,
            default: None,
            description: String::new(),
        }
    }

    pub fn with_default(ty: ParamType, default: impl Into<Value>) -> Self {
        ParamDecl {
            ty,
            default: Some(default.into()),
            description: String::new(),
        }
    }

    pub fn describe(mut self, description: &str) -> Self {
        self.description = description.to_string();
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrefabError {
    #[error("a prefab named `{0}` is already registered")]
    DuplicatePrefabName(String),
    #[error("prefab `{prefab}` has an invalid schema: {detail}")]
    InvalidSchema { prefab: String, detail: String },
    #[error("unknown prefab `{0}`")]
    UnresolvedPrefab(String),
    #[error("prefab `{prefab}` declares no parameter `{param}`")]
    UnknownParameter { prefab: String, param: String },
    #[error("prefab `{prefab}`: parameter `{param}` expects {expected:?}")]
    TypeMismatch {
        prefab: String,
        param: String,
        expected: ParamType,
    },
    #[error("prefab `{prefab}`: parameter `{param}` is required")]
    MissingParameter { prefab: String, param: String },
    #[error("prefab `{prefab}`: {source}")]
    Build {
        prefab: String,
        #[source]
        source: BuildError,
    },
}

/// A pre-configured collection of component specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prefab {
    pub name: String,
    pub role: PrefabRole,
    #[serde(default)]
    pub description: String,
    pub components: Vec<ComponentSpec>,
    pub params_schema: BTreeMap<String, ParamDecl>,
}

fn collect_refs(value: &Value, out: &mut Vec<String>) {
    match value {
        Value::Object(map) => {
            if let (1, Some(Value::String(key))) = (map.len(), map.get(PARAM_REF)) {
                out.push(key.clone());
                return;
            }
            map.values().for_each(|v| collect_refs(v, out));
        }
        Value::Array(items) => items.iter().for_each(|v| collect_refs(v, out)),
        _ => {}
    }
}

fn substitute(value: &Value, params: &Map<String, Value>) -> Value {
    match value {
        Value::Object(map) => {
            if let (1, Some(Value::String(key))) = (map.len(), map.get(PARAM_REF)) {
                return params.get(key).cloned().unwrap_or(Value::Null);
            }
            Value::Object(map.iter().map(|(k, v)| (k.clone(), substitute(v, params))).collect())
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| substitute(v, params)).collect()),
        other => other.clone(),
    }
}

impl Prefab {
    /// Checks the schema: a `name` parameter, well-typed defaults, and only
    /// declared `$param` references.
    pub fn check_schema(&self) -> Result<(), PrefabError> {
        let invalid = |detail: String| PrefabError::InvalidSchema {
            prefab: self.name.clone(),
            detail,
        };
        if self.name.trim().is_empty() {
            return Err(invalid("the prefab name is empty".into()));
        }
        match self.params_schema.get("name") {
            Some(decl) if decl.ty == ParamType::String => {}
            _ => return Err(invalid("every prefab needs a string `name` parameter".into())),
        }
        for (key, decl) in &self.params_schema {
            if let Some(default) = &decl.default {
                if !default.is_null() && !decl.ty.accepts(default) {
                    return Err(invalid(format!("default of `{key}` is not {:?}", decl.ty)));
                }
            }
        }
        let mut refs = Vec::new();
        for spec in &self.components {
            for value in spec.params.values() {
                collect_refs(value, &mut refs);
            }
        }
        if let Some(unknown) = refs.iter().find(|r| !self.params_schema.contains_key(*r)) {
            return Err(invalid(format!("`$param` reference to undeclared `{unknown}`")));
        }
        Ok(())
    }

    fn check_override(&self, key: &str, value: &Value) -> Result<(), PrefabError> {
        let decl = self
            .params_schema
            .get(key)
            .ok_or_else(|| PrefabError::UnknownParameter {
                prefab: self.name.clone(),
                param: key.to_string(),
            })?;
        if !decl.ty.accepts(value) {
            return Err(PrefabError::TypeMismatch {
                prefab: self.name.clone(),
                param: key.to_string(),
                expected: decl.ty,
            });
        }
        Ok(())
    }

    /// Checks overrides against the schema without applying them.
    pub fn check_overrides(&self, overrides: &Map<String, Value>) -> Result<(), PrefabError> {
        overrides.iter().try_for_each(|(k, v)| self.check_override(k, v))
    }

    /// An independent copy named `name` whose parameter defaults are
    /// replaced by `overrides`.
    pub fn clone_with_overrides(&self, name: &str, overrides: &Map<String, Value>) -> Result<Prefab, PrefabError> {
        self.check_overrides(overrides)?;
        let mut clone = self.clone();
        clone.name = name.to_string();
        for (key, value) in overrides {
            if let Some(decl) = clone.params_schema.get_mut(key) {
                decl.default = Some(value.clone());
            }
        }
        Ok(clone)
    }

    /// Defaults merged with `overrides`; every parameter must end up set.
    pub fn effective_params(&self, overrides: &Map<String, Value>) -> Result<Map<String, Value>, PrefabError> {
        self.check_overrides(overrides)?;
        let mut params = Map::new();
        for (key, decl) in &self.params_schema {
            let value = overrides
                .get(key)
                .or(decl.default.as_ref())
                .cloned()
                .unwrap_or(Value::Null);
            if value.is_null() && decl.default.is_none() {
                return Err(PrefabError::MissingParameter {
                    prefab: self.name.clone(),
                    param: key.clone(),
                });
            }
            params.insert(key.clone(), value);
        }
        Ok(params)
    }

    /// Entity name and concrete component specs for these overrides.
    pub fn resolve(&self, overrides: &Map<String, Value>) -> Result<(String, Vec<ComponentSpec>), PrefabError> {
        let params = self.effective_params(overrides)?;
        let name = params
            .get("name")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let specs = self
            .components
            .iter()
            .map(|spec| ComponentSpec {
                name: spec.name.clone(),
                type_id: spec.type_id.clone(),
                params: spec
                    .params
                    .iter()
                    .map(|(k, v)| (k.clone(), substitute(v, &params)))
                    .filter(|(_, v)| !v.is_null())
                    .collect(),
            })
            .collect();
        Ok((name, specs))
    }

    pub fn instantiate(
        &self,
        overrides: &Map<String, Value>,
        components: &ComponentRegistry,
        resources: &Resources,
    ) -> Result<Entity, PrefabError> {
        let (name, specs) = self.resolve(overrides)?;
        components
            .build_entity(&name, &specs, resources)
            .map_err(|source| PrefabError::Build {
                prefab: self.name.clone(),
                source,
            })
    }

    pub fn uses_component(&self, type_id: &str) -> bool {
        self.components.iter().any(|c| c.type_id == type_id)
    }
}

/// Prefab name → prefab. Registration happens before runs; reads are
/// shared freely afterwards.
#[derive(Debug, Clone, Default)]
pub struct PrefabRegistry {
    prefabs: BTreeMap<String, Prefab>,
}

impl PrefabRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        for prefab in builtin_prefabs() {
            registry.register(prefab).expect("built-in prefabs are valid");
        }
        registry
    }

    pub fn register(&mut self, prefab: Prefab) -> Result<(), PrefabError> {
        if self.prefabs.contains_key(&prefab.name) {
            return Err(PrefabError::DuplicatePrefabName(prefab.name));
        }
        prefab.check_schema()?;
        self.prefabs.insert(prefab.name.clone(), prefab);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Prefab> {
        self.prefabs.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.prefabs.keys().map(String::as_str)
    }

    pub fn list(&self) -> impl Iterator<Item = &Prefab> {
        self.prefabs.values()
    }

    /// The catalog as exported to `prefabs.json`.
    pub fn catalog_json(&self) -> String {
        let prefabs: Vec<&Prefab> = self.list().collect();
        crate::canonical::to_string(&serde_json::json!({ "prefabs": prefabs })).expect("prefabs serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(value: Value) -> Map<String, Value> {
        value.as_object().cloned().unwrap()
    }

    #[test]
    fn catalog_has_the_builtins() {
        let registry = PrefabRegistry::builtin();
        for name in [
            "basic_actor",
            "reflective_actor",
            "rational_actor",
            "human_actor",
            "dramatist_gm",
            "evaluationist_gm",
            "simulationist_gm",
        ] {
            assert!(registry.get(name).is_some(), "{name}");
        }
    }

    #[test]
    fn duplicate_registration_fails() {
        let mut registry = PrefabRegistry::builtin();
        let basic = registry.get("basic_actor").unwrap().clone();
        assert_eq!(
            registry.register(basic),
            Err(PrefabError::DuplicatePrefabName("basic_actor".into()))
        );
    }

    #[test]
    fn every_builtin_instantiates() {
        let registry = PrefabRegistry::builtin();
        let components = ComponentRegistry::builtin();
        for prefab in registry.list() {
            let overrides = obj(json!({ "name": "Probe" }));
            let overrides = match prefab.name.as_str() {
                "rational_actor" => obj(json!({ "name": "Probe", "utilities": { "a": 1.0 } })),
                _ => overrides,
            };
            prefab
                .instantiate(&overrides, &components, &Resources::default())
                .unwrap_or_else(|e| panic!("{}: {e}", prefab.name));
        }
    }

    #[test]
    fn clone_differs_only_where_overridden() {
        let registry = PrefabRegistry::builtin();
        let basic = registry.get("basic_actor").unwrap();
        let clone = basic
            .clone_with_overrides("baker", &obj(json!({ "persona": "Alice is a baker." })))
            .unwrap();
        assert_eq!(clone.components, basic.components);
        for (key, decl) in &clone.params_schema {
            if key == "persona" {
                assert_eq!(decl.default, Some(json!("Alice is a baker.")));
            } else {
                assert_eq!(decl, &basic.params_schema[key]);
            }
        }
    }

    #[test]
    fn undeclared_and_mistyped_overrides_fail() {
        let registry = PrefabRegistry::builtin();
        let basic = registry.get("basic_actor").unwrap();
        assert!(matches!(
            basic.clone_with_overrides("x", &obj(json!({ "wings": 2 }))),
            Err(PrefabError::UnknownParameter { .. })
        ));
        assert!(matches!(
            basic.clone_with_overrides("x", &obj(json!({ "persona": 3 }))),
            Err(PrefabError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn schema_rejects_undeclared_reference() {
        let mut prefab = PrefabRegistry::builtin().get("basic_actor").unwrap().clone();
        prefab.name = "broken".into();
        prefab.components[0]
            .params
            .insert("text".into(), json!({ "$param": "nope" }));
        assert!(matches!(prefab.check_schema(), Err(PrefabError::InvalidSchema { .. })));
    }
}
