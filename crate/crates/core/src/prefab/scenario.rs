use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{PrefabError, PrefabRegistry, PrefabRole};
use crate::canonical;
use crate::components::gm::{NEXT_ACTING_TAG, NEXT_WAKE_TAG};
use crate::components::{ComponentRegistry, Resources};
use crate::engine::{EngineKind, RunConfig};
use crate::hash::sha256_hex;
use crate::kernel::{Entity, EntityId, Sampling};
use crate::lm::ProviderKind;

pub const SCENARIO_VERSION: u32 = 1;

/// Where responses come from. CLI flags may override any of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Script file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    /// Inline script, in the same format as a script file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cassette: Option<String>,
    /// The provider a `record` run wraps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<ProviderKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
}

impl ProviderConfig {
    pub fn new(kind: ProviderKind) -> Self {
        ProviderConfig {
            kind,
            script: None,
            responses: None,
            cassette: None,
            inner: None,
            max_tokens: None,
            temperature: None,
            retries: None,
        }
    }

    pub fn sampling(&self) -> Sampling {
        let defaults = Sampling::default();
        Sampling {
            max_tokens: self.max_tokens.unwrap_or(defaults.max_tokens),
            temperature: self.temperature.unwrap_or(defaults.temperature),
            retries: self.retries.unwrap_or(defaults.retries),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySlot {
    pub prefab: String,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub overrides: Map<String, Value>,
}

impl EntitySlot {
    pub fn new(prefab: impl Into<String>, overrides: Value) -> Self {
        EntitySlot {
            prefab: prefab.into(),
            overrides: overrides.as_object().cloned().unwrap_or_default(),
        }
    }
}

/// A whole episode, as a canonical JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub version: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub engine: EngineKind,
    pub premise: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderConfig>,
    pub max_steps: u64,
    pub seed: u64,
    pub actors: Vec<EntitySlot>,
    pub gm: EntitySlot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Vec<String>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("not a scenario document: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{0}")]
    Invalid(ValidationReport),
}

impl ScenarioDoc {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Sorted-key JSON; loading and re-serializing a canonical document
    /// reproduces it byte for byte.
    pub fn to_canonical(&self) -> String {
        canonical::to_string(self).expect("scenario documents serialize")
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_canonical().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub code: String,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let severity = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{severity} [{}] {}: {}", self.code, self.path, self.message)
    }
}

/// Every problem found in a document, not just the first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn error(&mut self, code: &str, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            code: code.into(),
            path: path.into(),
            message: message.into(),
        });
    }

    fn warning(&mut self, code: &str, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Warning,
            code: code.into(),
            path: path.into(),
            message: message.into(),
        });
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn is_ok(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn has_code(&self, code: &str) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Built entities and engine configuration, ready to run.
pub struct Instance {
    pub actors: Vec<Entity>,
    pub gm: Entity,
    pub config: RunConfig,
}

fn prefab_issue(report: &mut ValidationReport, slot_path: &str, error: PrefabError) {
    match error {
        PrefabError::UnknownParameter { param, .. } => report.error(
            "UnknownParameter",
            format!("{slot_path}.overrides.{param}"),
            error_text(&param, "is not a declared parameter"),
        ),
        PrefabError::TypeMismatch { param, expected, .. } => report.error(
            "TypeMismatch",
            format!("{slot_path}.overrides.{param}"),
            format!("expected {expected:?}"),
        ),
        PrefabError::MissingParameter { param, .. } => report.error(
            "MissingParameter",
            format!("{slot_path}.overrides.{param}"),
            error_text(&param, "is required"),
        ),
        PrefabError::Build { source, .. } => report.error("BuildFailed", slot_path, source.to_string()),
        other => report.error("InvalidPrefab", slot_path, other.to_string()),
    }
}

fn error_text(param: &str, what: &str) -> String {
    format!("`{param}` {what}")
}

/// Checks one slot's overrides; returns the entity name if they resolve.
fn check_slot(
    report: &mut ValidationReport,
    prefabs: &PrefabRegistry,
    slot: &EntitySlot,
    path: &str,
    role: PrefabRole,
) -> Option<String> {
    let Some(prefab) = prefabs.get(&slot.prefab) else {
        report.error(
            "UnresolvedPrefab",
            format!("{path}.prefab"),
            format!("no prefab named `{}`", slot.prefab),
        );
        return None;
    };
    if prefab.role != role {
        report.error(
            "WrongRole",
            format!("{path}.prefab"),
            format!("`{}` is a {:?} prefab, expected {role:?}", slot.prefab, prefab.role),
        );
    }
    let mut ok = true;
    for (key, value) in &slot.overrides {
        let single: Map<String, Value> = [(key.clone(), value.clone())].into_iter().collect();
        if let Err(e) = prefab.check_overrides(&single) {
            prefab_issue(report, path, e);
            ok = false;
        }
    }
    if !ok {
        return None;
    }
    match prefab.resolve(&slot.overrides) {
        Ok((name, _)) if name.trim().is_empty() => {
            report.error(
                "EmptyName",
                format!("{path}.overrides.name"),
                "entity names must be non-empty",
            );
            None
        }
        Ok((name, _)) => Some(name),
        Err(e) => {
            prefab_issue(report, path, e);
            None
        }
    }
}

fn check(
    doc: &ScenarioDoc,
    prefabs: &PrefabRegistry,
    components: &ComponentRegistry,
    resources: &Resources,
) -> (ValidationReport, Option<(Vec<Entity>, Entity)>) {
    let mut report = ValidationReport::default();
    if doc.version != SCENARIO_VERSION {
        report.error(
            "UnsupportedVersion",
            "version",
            format!("version {} is not supported (expected {SCENARIO_VERSION})", doc.version),
        );
    }
    if doc.max_steps == 0 {
        report.error("InvalidValue", "max_steps", "max_steps must be at least 1");
    }
    if doc.premise.trim().is_empty() {
        report.warning(
            "EmptyPremise",
            "premise",
            "no premise is observed before the first step",
        );
    }
    if doc.actors.is_empty() {
        report.error("NoActors", "actors", "a scenario needs at least one actor");
    }

    let mut names: BTreeMap<String, String> = BTreeMap::new();
    let mut slots: Vec<(String, &EntitySlot, PrefabRole, Option<String>)> = Vec::new();
    for (i, slot) in doc.actors.iter().enumerate() {
        let path = format!("actors[{i}]");
        let name = check_slot(&mut report, prefabs, slot, &path, PrefabRole::Actor);
        slots.push((path, slot, PrefabRole::Actor, name));
    }
    let gm_name = check_slot(&mut report, prefabs, &doc.gm, "gm", PrefabRole::Gm);
    slots.push(("gm".into(), &doc.gm, PrefabRole::Gm, gm_name));
    for (path, _, _, name) in &slots {
        if let Some(name) = name {
            if let Some(first) = names.get(name) {
                report.error(
                    "DuplicateEntityName",
                    format!("{path}.overrides.name"),
                    format!("`{name}` is used by both {first} and {path}"),
                );
            } else {
                names.insert(name.clone(), path.clone());
            }
        }
    }

    if let Some(rotation) = &doc.rotation {
        if rotation.is_empty() {
            report.error("InvalidValue", "rotation", "rotation must name at least one actor");
        }
        for (j, name) in rotation.iter().enumerate() {
            let is_actor = names.get(name).is_some_and(|p| p.starts_with("actors"));
            if !is_actor {
                report.error(
                    "UnknownRotationActor",
                    format!("rotation[{j}]"),
                    format!("`{name}` is not an actor"),
                );
            }
        }
    }

    let mut actors = Vec::new();
    let mut gm = None;
    for (path, slot, role, name) in &slots {
        if name.is_none() {
            continue;
        }
        let Some(prefab) = prefabs.get(&slot.prefab) else {
            continue;
        };
        match prefab.instantiate(&slot.overrides, components, resources) {
            Ok(entity) if *role == PrefabRole::Gm => gm = Some(entity),
            Ok(entity) => actors.push(entity),
            Err(e) => prefab_issue(&mut report, path, e),
        }
    }

    if let Some(gm) = &gm {
        let needs = match doc.engine {
            EngineKind::Sequential if doc.rotation.is_none() => Some(NEXT_ACTING_TAG),
            EngineKind::Asynchronous => Some(NEXT_WAKE_TAG),
            _ => None,
        };
        if let Some(tag) = needs {
            if !gm.answers(tag) {
                report.error(
                    "MissingGmComponent",
                    "gm.prefab",
                    format!("the {} engine needs a GM component answering `{tag}`", doc.engine),
                );
            }
        }
    }

    if report.is_ok() && actors.len() == doc.actors.len() {
        if let Some(gm) = gm {
            return (report, Some((actors, gm)));
        }
    }
    (report, None)
}

/// Aggregated report; error-free iff the document instantiates.
pub fn validate(doc: &ScenarioDoc, prefabs: &PrefabRegistry, components: &ComponentRegistry) -> ValidationReport {
    check(doc, prefabs, components, &Resources::default()).0
}

pub fn instantiate(
    doc: &ScenarioDoc,
    prefabs: &PrefabRegistry,
    components: &ComponentRegistry,
    resources: &Resources,
) -> Result<Instance, ScenarioError> {
    let (report, built) = check(doc, prefabs, components, resources);
    let Some((actors, gm)) = built else {
        return Err(ScenarioError::Invalid(report));
    };
    let mut config = RunConfig::new(doc.engine, doc.max_steps, doc.seed).with_premise(doc.premise.clone());
    if let Some(rotation) = &doc.rotation {
        config.rotation = Some(
            rotation
                .iter()
                .map(|r| EntityId::new(r.as_str()).expect("rotation names were validated"))
                .collect(),
        );
    }
    if let Some(provider) = &doc.provider {
        config.sampling = provider.sampling();
    }
    config.header.insert("scenario_digest".into(), json!(doc.digest()));
    if !doc.name.is_empty() {
        config.header.insert("scenario".into(), json!(doc.name));
    }
    Ok(Instance { actors, gm, config })
}
