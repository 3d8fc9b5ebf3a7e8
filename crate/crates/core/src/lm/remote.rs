use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Completion, LanguageModel, LmError, PromptRequest, ProviderKind};

pub const BASE_URL_VAR: &str = "FABULA_LM_BASE_URL";
pub const MODEL_VAR: &str = "FABULA_LM_MODEL";
pub const API_KEY_VAR: &str = "FABULA_LM_API_KEY";

const MAX_ATTEMPTS: u32 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: String,
    /// First backoff delay; attempt `k` (0-based) waits `base_delay * 2^k`.
    pub base_delay: Duration,
    pub max_attempts: u32,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: api_key.into(),
            base_delay: Duration::from_millis(500),
            max_attempts: MAX_ATTEMPTS,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn from_env() -> Result<Self, LmError> {
        let get = |var: &str| std::env::var(var).ok().filter(|v| !v.is_empty());
        let base_url = get(BASE_URL_VAR).ok_or_else(|| LmError::Config(format!("{BASE_URL_VAR} is not set")))?;
        let model = get(MODEL_VAR).ok_or_else(|| LmError::Config(format!("{MODEL_VAR} is not set")))?;
        let api_key = get(API_KEY_VAR).ok_or_else(|| LmError::Config(format!("{API_KEY_VAR} is not set")))?;
        Ok(RemoteConfig::new(base_url, model, api_key))
    }

    fn validate(&self) -> Result<(), LmError> {
        if self.base_url.trim().is_empty() {
            return Err(LmError::Config("remote base URL is empty".into()));
        }
        if self.model.trim().is_empty() {
            return Err(LmError::Config("remote model id is empty".into()));
        }
        if self.api_key.trim().is_empty() {
            return Err(LmError::Config("remote auth token is missing".into()));
        }
        if self.max_attempts == 0 {
            return Err(LmError::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Client for a chat-completion style endpoint.
///
/// Retries 429, 5xx and transport errors with exponential backoff.
pub struct RemoteProvider {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    requests_sent: AtomicU64,
}

impl RemoteProvider {
    /// Fails before any network activity when the configuration is incomplete.
    pub fn new(config: RemoteConfig) -> Result<Self, LmError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LmError::Config(e.to_string()))?;
        Ok(RemoteProvider {
            config,
            client,
            requests_sent: AtomicU64::new(0),
        })
    }

    pub fn from_env() -> Result<Self, LmError> {
        RemoteProvider::new(RemoteConfig::from_env()?)
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests_sent.load(Ordering::Relaxed)
    }

    pub fn request_body(&self, request: &PromptRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.text}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "stop": request.stop,
            "seed": request.seed,
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, AttemptError> {
        self.requests_sent.fetch_add(1, Ordering::Relaxed);
        let response = self
            .client
            .post(self.config.endpoint())
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .map_err(|e| AttemptError::Retryable(None, e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(Some(status.as_u16()), status.to_string()));
        }
        if !status.is_success() {
            let detail = response.text().unwrap_or_default();
            return Err(AttemptError::Final(Some(status.as_u16()), detail));
        }
        let value: Value = response
            .json()
            .map_err(|e| AttemptError::Final(Some(status.as_u16()), format!("invalid JSON body: {e}")))?;
        first_completion_text(&value)
            .ok_or_else(|| AttemptError::Final(Some(status.as_u16()), "response has no completion text".into()))
    }
}

enum AttemptError {
    Retryable(Option<u16>, String),
    Final(Option<u16>, String),
}

/// `choices[0].message.content`, or `choices[0].text` for completion-style
/// servers.
fn first_completion_text(body: &Value) -> Option<String> {
    let first = body.get("choices")?.get(0)?;
    first
        .pointer("/message/content")
        .or_else(|| first.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl LanguageModel for RemoteProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion, LmError> {
        request.validate()?;
        let body = self.request_body(request);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        provider: ProviderKind::Remote,
                        attempts,
                    })
                }
                Err(AttemptError::Final(status, detail)) => {
                    return Err(LmError::Remote {
                        status,
                        attempts,
                        detail,
                    })
                }
                Err(AttemptError::Retryable(status, detail)) => {
                    if attempts >= self.config.max_attempts {
                        return Err(LmError::Remote {
                            status,
                            attempts,
                            detail,
                        });
                    }
                    log::debug!("remote attempt {attempts} failed ({detail}); backing off");
                    thread::sleep(self.config.base_delay * 2u32.pow(attempts - 1));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_token_fails_before_network() {
        let err = RemoteProvider::new(RemoteConfig::new("http://127.0.0.1:9", "m", ""))
            .err()
            .unwrap();
        assert!(matches!(err, LmError::Config(_)));
    }

    #[test]
    fn extracts_chat_and_completion_text() {
        let chat = json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(first_completion_text(&chat).as_deref(), Some("hi"));
        let legacy = json!({"choices": [{"text": "yo"}]});
        assert_eq!(first_completion_text(&legacy).as_deref(), Some("yo"));
        assert_eq!(first_completion_text(&json!({"choices": []})), None);
    }
}
