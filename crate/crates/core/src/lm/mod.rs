//! Text-generation providers.
//!
//! Every provider answers a [`PromptRequest`] with a [`Completion`]. Test
//! providers ([`ScriptedProvider`], [`EchoHashProvider`]) and the
//! record/replay pair make runs reproducible without a network; the
//! [`RemoteProvider`] talks to a chat-completion style HTTP API.

mod cassette;
mod echo;
mod remote;
mod sampling;
mod scripted;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::canonical;
use crate::hash::{fnv1a64, sha256_hex};

pub use cassette::{Cassette, CassetteEntry, RecordingProvider, ReplayProvider};
pub use echo::{echo_response, EchoHashProvider};
pub use remote::{RemoteConfig, RemoteProvider, API_KEY_VAR, BASE_URL_VAR, MODEL_VAR};
pub use sampling::{sample_choice, sample_float, sample_text, ChoiceSample, FloatSample, LmCall, DEFAULT_RETRIES};
pub use scripted::{ScriptDoc, ScriptedProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Scripted,
    #[serde(rename = "echo")]
    EchoHash,
    Record,
    Replay,
    Remote,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Scripted => "scripted",
            ProviderKind::EchoHash => "echo",
            ProviderKind::Record => "record",
            ProviderKind::Replay => "replay",
            ProviderKind::Remote => "remote",
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(ProviderKind::Scripted),
            "echo" | "echo_hash" => Ok(ProviderKind::EchoHash),
            "record" => Ok(ProviderKind::Record),
            "replay" => Ok(ProviderKind::Replay),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(format!("unknown provider `{other}`")),
        }
    }
}

/// Who is asking, and about what. Used by the scripted provider to pick a
/// response lane; never part of the request's canonical form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lane {
    pub entity: String,
    pub tag: Option<String>,
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub text: String,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop: Vec<String>,
    pub seed: u64,
    #[serde(skip)]
    pub lane: Lane,
}

impl PromptRequest {
    pub fn new(text: impl Into<String>, seed: u64) -> Self {
        PromptRequest {
            text: text.into(),
            max_tokens: 256,
            temperature: 0.0,
            stop: Vec::new(),
            seed,
            lane: Lane::default(),
        }
    }

    pub fn with_lane(mut self, lane: Lane) -> Self {
        self.lane = lane;
        self
    }

    /// Canonical JSON of the fields that define the request.
    pub fn canonical_form(&self) -> String {
        canonical::value_to_string(&json!({
            "max_tokens": self.max_tokens,
            "seed": self.seed,
            "stop": self.stop,
            "temperature": self.temperature,
            "text": self.text,
        }))
    }

    /// 64-bit cassette key.
    pub fn key(&self) -> u64 {
        fnv1a64(self.canonical_form().as_bytes())
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.canonical_form().as_bytes())
    }

    pub fn validate(&self) -> Result<(), LmError> {
        if self.text.is_empty() {
            return Err(LmError::Config("prompt text must be non-empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(LmError::Config("max_tokens must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LmError::Config("temperature must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A provider's answer, with the origin details the trace records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub provider: ProviderKind,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmError {
    #[error("scripted provider exhausted (lane `{lane}`)")]
    Exhausted { lane: String },
    #[error("cassette has no entry for request {key_hex}")]
    CassetteMiss { key_hex: String },
    #[error("remote call failed after {attempts} attempt(s){}: {detail}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Remote {
        status: Option<u16>,
        attempts: u32,
        detail: String,
    },
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("provider returned an empty response")]
    EmptyResponse,
    #[error("provider i/o: {0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl LmError {
    /// Errors that mean the run itself is misconfigured (an exhausted
    /// script, a cassette that does not match the run). These abort a run;
    /// all others are handled by per-call fallbacks.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            LmError::Exhausted { .. } | LmError::CassetteMiss { .. } | LmError::Config(_) | LmError::Io(_)
        )
    }
}

pub trait LanguageModel: Send + Sync {
    fn kind(&self) -> ProviderKind;

    fn complete(&self, request: &PromptRequest) -> Result<Completion, LmError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn kind(&self) -> ProviderKind {
        (**self).kind()
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion, LmError> {
        (**self).complete(request)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn kind(&self) -> ProviderKind {
        (**self).kind()
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion, LmError> {
        (**self).complete(request)
    }
}
