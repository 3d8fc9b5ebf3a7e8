use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Name of an entity. Non-empty; unique within a simulation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityId(String);

impl EntityId {
    pub fn new(name: impl Into<String>) -> Result<Self, EmptyName> {
        let name = name.into();
        if name.trim().is_empty() {
            Err(EmptyName)
        } else {
            Ok(EntityId(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("entity names must be non-empty")]
pub struct EmptyName;

impl TryFrom<String> for EntityId {
    type Error = EmptyName;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        EntityId::new(value)
    }
}

impl From<EntityId> for String {
    fn from(id: EntityId) -> String {
        id.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for EntityId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputType {
    Free,
    Choice,
    Float,
}

/// A typed request to act.
///
/// `params` carries structured context for tagged requests (the actor and
/// attempt behind a `resolve`, the subject of a `perceive`); it is not part of
/// the prompt unless a component puts it there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub call_to_action: String,
    pub output_type: OutputType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("choice specs need at least one option")]
    NoOptions,
    #[error("options are only allowed on choice specs")]
    UnexpectedOptions,
    #[error("choice options must be non-empty")]
    EmptyOption,
    #[error("duplicate choice option `{0}`")]
    DuplicateOption(String),
}

impl ActionSpec {
    pub fn free(call_to_action: impl Into<String>) -> Self {
        ActionSpec {
            call_to_action: call_to_action.into(),
            output_type: OutputType::Free,
            options: Vec::new(),
            tag: None,
            params: BTreeMap::new(),
        }
    }

    pub fn choice<S: Into<String>>(call_to_action: impl Into<String>, options: impl IntoIterator<Item = S>) -> Self {
        ActionSpec {
            call_to_action: call_to_action.into(),
            output_type: OutputType::Choice,
            options: options.into_iter().map(Into::into).collect(),
            tag: None,
            params: BTreeMap::new(),
        }
    }

    pub fn float(call_to_action: impl Into<String>) -> Self {
        ActionSpec {
            call_to_action: call_to_action.into(),
            output_type: OutputType::Float,
            options: Vec::new(),
            tag: None,
            params: BTreeMap::new(),
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        match self.output_type {
            OutputType::Choice => {
                if self.options.is_empty() {
                    return Err(SpecError::NoOptions);
                }
                for (i, option) in self.options.iter().enumerate() {
                    if option.is_empty() {
                        return Err(SpecError::EmptyOption);
                    }
                    if self.options[..i].contains(option) {
                        return Err(SpecError::DuplicateOption(option.clone()));
                    }
                }
                Ok(())
            }
            _ if !self.options.is_empty() => Err(SpecError::UnexpectedOptions),
            _ => Ok(()),
        }
    }

    /// Replaces `{name}` with the acting entity's name. Other placeholders
    /// are left as they are.
    pub fn render_call(&self, name: &str) -> String {
        self.call_to_action.replace("{name}", name)
    }

    /// Parses a raw answer against this spec, with the same rules providers
    /// and humans are held to.
    pub fn parse_answer(&self, raw: &str) -> Result<ActionPayload, AnswerError> {
        match self.output_type {
            OutputType::Free => {
                if raw.trim().is_empty() {
                    Err(AnswerError::Empty)
                } else {
                    Ok(ActionPayload::FreeText { text: raw.to_string() })
                }
            }
            OutputType::Choice => match_choice(&self.options, raw)
                .map(|index| ActionPayload::Choice {
                    option: self.options[index].clone(),
                    index,
                })
                .ok_or_else(|| AnswerError::NotAnOption(raw.to_string())),
            OutputType::Float => parse_decimal(raw)
                .map(|value| ActionPayload::Number { value })
                .ok_or_else(|| AnswerError::NotANumber(raw.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnswerError {
    #[error("answer is empty")]
    Empty,
    #[error("`{0}` is not one of the options")]
    NotAnOption(String),
    #[error("`{0}` contains no number")]
    NotANumber(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionPayload {
    FreeText { text: String },
    Choice { option: String, index: usize },
    Number { value: f64 },
}

impl ActionPayload {
    pub fn output_type(&self) -> OutputType {
        match self {
            ActionPayload::FreeText { .. } => OutputType::Free,
            ActionPayload::Choice { .. } => OutputType::Choice,
            ActionPayload::Number { .. } => OutputType::Float,
        }
    }
}

/// The resolved answer to an [`ActionSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub actor: EntityId,
    pub raw_text: String,
    pub payload: ActionPayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_tag: Option<String>,
    /// Set when the payload is a fallback after invalid answers.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

impl Action {
    pub fn new(actor: EntityId, raw_text: impl Into<String>, payload: ActionPayload) -> Self {
        Action {
            actor,
            raw_text: raw_text.into(),
            payload,
            spec_tag: None,
            fallback: false,
        }
    }

    pub fn free(actor: EntityId, text: impl Into<String>) -> Self {
        let text = text.into();
        Action::new(actor, text.clone(), ActionPayload::FreeText { text })
    }

    /// The text that stands for this action in events and prompts.
    pub fn text(&self) -> &str {
        match &self.payload {
            ActionPayload::FreeText { text } => text,
            ActionPayload::Choice { option, .. } => option,
            ActionPayload::Number { .. } => &self.raw_text,
        }
    }

    pub fn conforms_to(&self, spec: &ActionSpec) -> bool {
        if self.payload.output_type() != spec.output_type {
            return false;
        }
        match &self.payload {
            ActionPayload::Choice { option, index } => spec.options.get(*index) == Some(option),
            ActionPayload::Number { value } => value.is_finite(),
            ActionPayload::FreeText { .. } => true,
        }
    }
}

/// A GM-resolved happening as seen by one entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub sim_time: u64,
    pub seq: u64,
    pub source: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub component: String,
    pub label: String,
    pub text: String,
}

/// Labeled context contributed by an entity's context components, in
/// registration order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub entries: Vec<ContextEntry>,
}

impl ContextBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, component: impl Into<String>, label: impl Into<String>, text: impl Into<String>) {
        self.entries.push(ContextEntry {
            component: component.into(),
            label: label.into(),
            text: text.into(),
        });
    }

    pub fn get(&self, label: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.label == label).map(|e| e.text.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// `## {label}\n{text}\n` per entry, concatenated.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str("## ");
            out.push_str(&entry.label);
            out.push('\n');
            out.push_str(&entry.text);
            out.push('\n');
        }
        out
    }
}

/// Matches an answer to an option: case-insensitive exact text, or the
/// option's 1-based numeral. Surrounding whitespace, quotes and a trailing
/// period are ignored.
pub fn match_choice(options: &[String], answer: &str) -> Option<usize> {
    let cleaned = answer
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`')
        .trim_end_matches('.')
        .trim();
    if cleaned.is_empty() {
        return None;
    }
    let lowered = cleaned.to_lowercase();
    if let Some(i) = options.iter().position(|o| o.to_lowercase() == lowered) {
        return Some(i);
    }
    match cleaned.parse::<usize>() {
        Ok(n) if n >= 1 && n <= options.len() => Some(n - 1),
        _ => None,
    }
}

fn decimal_literal() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?").unwrap())
}

/// Parses the first maximal decimal literal in `text`.
pub fn parse_decimal(text: &str) -> Option<f64> {
    let found = decimal_literal().find(text)?;
    found.as_str().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn spec_validation() {
        assert!(ActionSpec::choice("?", ["stay", "leave"]).validate().is_ok());
        assert_eq!(
            ActionSpec::choice("?", Vec::<String>::new()).validate(),
            Err(SpecError::NoOptions)
        );
        assert_eq!(
            ActionSpec::choice("?", ["a", "a"]).validate(),
            Err(SpecError::DuplicateOption("a".into()))
        );
        assert_eq!(
            ActionSpec::choice("?", ["a", ""]).validate(),
            Err(SpecError::EmptyOption)
        );
        let mut free = ActionSpec::free("?");
        free.options.push("x".into());
        assert_eq!(free.validate(), Err(SpecError::UnexpectedOptions));
    }

    #[test]
    fn placeholder_substitution_leaves_unknown_placeholders() {
        let spec = ActionSpec::free("What does {name} do about {weather}?");
        assert_eq!(spec.render_call("Alice"), "What does Alice do about {weather}?");
    }

    #[test]
    fn choice_matching() {
        let options = opts(&["stay", "leave"]);
        assert_eq!(match_choice(&options, "leave"), Some(1));
        assert_eq!(match_choice(&options, "  LEAVE. "), Some(1));
        assert_eq!(match_choice(&options, "\"Stay\""), Some(0));
        assert_eq!(match_choice(&options, "2"), Some(1));
        assert_eq!(match_choice(&options, "3"), None);
        assert_eq!(match_choice(&options, "0"), None);
        assert_eq!(match_choice(&options, "maybe"), None);
        assert_eq!(match_choice(&options, ""), None);
    }

    #[test]
    fn decimal_extraction() {
        assert_eq!(parse_decimal("I bid 12.5 coins"), Some(12.5));
        assert_eq!(parse_decimal("-3e2 then 7"), Some(-300.0));
        assert_eq!(parse_decimal("none"), None);
        assert_eq!(parse_decimal("score: .5"), Some(0.5));
        assert_eq!(parse_decimal("1e999"), None);
    }

    #[test]
    fn conformance() {
        let spec = ActionSpec::choice("?", ["north", "south"]);
        let actor = EntityId::new("A").unwrap();
        let ok = Action::new(
            actor.clone(),
            "south",
            ActionPayload::Choice {
                option: "south".into(),
                index: 1,
            },
        );
        assert!(ok.conforms_to(&spec));
        let wrong_index = Action::new(
            actor.clone(),
            "south",
            ActionPayload::Choice {
                option: "south".into(),
                index: 0,
            },
        );
        assert!(!wrong_index.conforms_to(&spec));
        assert!(!Action::free(actor, "south").conforms_to(&spec));
    }

    #[test]
    fn bundle_render_format() {
        let mut bundle = ContextBundle::new();
        bundle.push("persona", "Identity", "Alice is a baker.");
        bundle.push("obs", "Recent observations", "It rains.");
        assert_eq!(
            bundle.render(),
            "## Identity\nAlice is a baker.\n## Recent observations\nIt rains.\n"
        );
    }

    #[test]
    fn entity_id_rejects_blank() {
        assert!(EntityId::new("").is_err());
        assert!(EntityId::new("  ").is_err());
        assert!(serde_json::from_str::<EntityId>("\"\"").is_err());
    }
}
