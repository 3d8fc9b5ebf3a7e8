use super::{Completion, LanguageModel, LmError, PromptRequest, ProviderKind};
use crate::hash::fnv1a64;

/// `"RESP-"` followed by the 16-digit lowercase hex of
/// `FNV-1a-64(UTF-8(text)) XOR seed`.
pub fn echo_response(text: &str, seed: u64) -> String {
    format!("RESP-{:016x}", fnv1a64(text.as_bytes()) ^ seed)
}

/// Deterministic provider whose answer is a hash of the request.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoHashProvider;

impl LanguageModel for EchoHashProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::EchoHash
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion, LmError> {
        Ok(Completion {
            text: echo_response(&request.text, request.seed),
            provider: ProviderKind::EchoHash,
            attempts: 1,
        })
    }
}
