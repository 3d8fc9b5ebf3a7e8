use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{Completion, LanguageModel, LmError, PromptRequest, ProviderKind};

/// Response script.
///
/// Lanes are looked up most-specific first: `entity/tag/subject`,
/// `entity/tag`, `entity`, `*/tag`, then `default`. An empty lane falls
/// through to the next candidate. Keying lanes by entity keeps scripted runs
/// deterministic when entities act concurrently.
///
/// A bare JSON array is accepted as a script with only a default lane.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScriptRepr")]
pub struct ScriptDoc {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub default: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub lanes: BTreeMap<String, Vec<String>>,
    /// Served when every candidate lane is empty, instead of failing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptRepr {
    List(Vec<String>),
    Doc {
        #[serde(default)]
        default: Vec<String>,
        #[serde(default)]
        lanes: BTreeMap<String, Vec<String>>,
        #[serde(default)]
        fallback: Option<String>,
    },
}

impl From<ScriptRepr> for ScriptDoc {
    fn from(repr: ScriptRepr) -> Self {
        match repr {
            ScriptRepr::List(default) => ScriptDoc {
                default,
                ..ScriptDoc::default()
            },
            ScriptRepr::Doc {
                default,
                lanes,
                fallback,
            } => ScriptDoc {
                default,
                lanes,
                fallback,
            },
        }
    }
}

impl ScriptDoc {
    pub fn load(path: &Path) -> Result<Self, LmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LmError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LmError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
struct Queues {
    default: VecDeque<String>,
    lanes: BTreeMap<String, VecDeque<String>>,
}

/// Serves canned responses in order.
#[derive(Debug)]
pub struct ScriptedProvider {
    queues: Mutex<Queues>,
    fallback: Option<String>,
}

impl ScriptedProvider {
    pub fn new(script: ScriptDoc) -> Self {
        ScriptedProvider {
            queues: Mutex::new(Queues {
                default: script.default.into(),
                lanes: script.lanes.into_iter().map(|(k, v)| (k, v.into())).collect(),
            }),
            fallback: script.fallback,
        }
    }

    /// A provider with only a default lane.
    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        ScriptedProvider::new(ScriptDoc {
            default: responses.into_iter().map(Into::into).collect(),
            ..ScriptDoc::default()
        })
    }

    /// Responses not yet served, across all lanes.
    pub fn remaining(&self) -> usize {
        let queues = self.queues.lock();
        queues.default.len() + queues.lanes.values().map(VecDeque::len).sum::<usize>()
    }

    fn candidates(request: &PromptRequest) -> Vec<String> {
        let lane = &request.lane;
        let mut keys = Vec::new();
        if let Some(tag) = &lane.tag {
            if let Some(subject) = &lane.subject {
                keys.push(format!("{}/{}/{}", lane.entity, tag, subject));
            }
            keys.push(format!("{}/{}", lane.entity, tag));
        }
        keys.push(lane.entity.clone());
        if let Some(tag) = &lane.tag {
            keys.push(format!("*/{tag}"));
        }
        keys
    }
}

impl LanguageModel for ScriptedProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Scripted
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion, LmError> {
        let candidates = Self::candidates(request);
        let mut queues = self.queues.lock();
        let mut text = None;
        for key in &candidates {
            if let Some(next) = queues.lanes.get_mut(key).and_then(VecDeque::pop_front) {
                text = Some(next);
                break;
            }
        }
        let text = match text
            .or_else(|| queues.default.pop_front())
            .or_else(|| self.fallback.clone())
        {
            Some(text) => text,
            None => {
                return Err(LmError::Exhausted {
                    lane: candidates.first().cloned().unwrap_or_default(),
                })
            }
        };
        Ok(Completion {
            text,
            provider: ProviderKind::Scripted,
            attempts: 1,
        })
    }
}
