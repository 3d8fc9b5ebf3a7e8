use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{Completion, LanguageModel, LmError, PromptRequest, ProviderKind};
use crate::canonical;

/// One recorded call. `provider` and `attempts` preserve the origin of
/// the original answer so a replayed run traces identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key_hex: String,
    pub request_digest: String,
    pub response: String,
    #[serde(default = "default_provider")]
    pub provider: ProviderKind,
    #[serde(default = "default_attempts")]
    pub attempts: u32,
}

fn default_provider() -> ProviderKind {
    ProviderKind::Remote
}

fn default_attempts() -> u32 {
    1
}

impl CassetteEntry {
    pub fn new(request: &PromptRequest, completion: &Completion) -> Self {
        CassetteEntry {
            key_hex: format!("{:016x}", request.key()),
            request_digest: request.digest(),
            response: completion.text.clone(),
            provider: completion.provider,
            attempts: completion.attempts,
        }
    }

    pub fn to_line(&self) -> String {
        canonical::to_string(self).expect("cassette entries serialize")
    }
}

/// Ordered cassette contents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, LmError> {
        let file = File::open(path).map_err(|e| LmError::Io(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LmError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line)
                .map_err(|e| LmError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(entry);
        }
        Ok(Cassette { entries })
    }
}

/// Wraps a provider and appends every answered request to a cassette file.
pub struct RecordingProvider {
    inner: Box<dyn LanguageModel>,
    out: Mutex<File>,
}

impl RecordingProvider {
    /// Opens `path` for appending.
    pub fn new(inner: Box<dyn LanguageModel>, path: &Path) -> Result<Self, LmError> {
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LmError::Io(format!("{}: {e}", path.display())))?;
        Ok(RecordingProvider {
            inner,
            out: Mutex::new(out),
        })
    }
}

impl LanguageModel for RecordingProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Record
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion, LmError> {
        // Holding the lock across the inner call keeps cassette order equal
        // to call order.
        let mut out = self.out.lock();
        let completion = self.inner.complete(request)?;
        let mut line = CassetteEntry::new(request, &completion).to_line();
        line.push('\n');
        out.write_all(line.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| LmError::Io(e.to_string()))?;
        Ok(completion)
    }
}

/// Answers from a cassette. Repeated identical requests replay in recorded
/// order (per-key FIFO).
pub struct ReplayProvider {
    entries: Mutex<HashMap<String, VecDeque<CassetteEntry>>>,
}

impl ReplayProvider {
    pub fn new(cassette: Cassette) -> Self {
        let mut entries: HashMap<String, VecDeque<CassetteEntry>> = HashMap::new();
        for entry in cassette.entries {
            entries.entry(entry.key_hex.clone()).or_default().push_back(entry);
        }
        ReplayProvider {
            entries: Mutex::new(entries),
        }
    }

    pub fn open(path: &Path) -> Result<Self, LmError> {
        Ok(ReplayProvider::new(Cassette::load(path)?))
    }
}

impl LanguageModel for ReplayProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Replay
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion, LmError> {
        let key_hex = format!("{:016x}", request.key());
        let entry = self
            .entries
            .lock()
            .get_mut(&key_hex)
            .and_then(VecDeque::pop_front)
            .ok_or(LmError::CassetteMiss { key_hex })?;
        Ok(Completion {
            text: entry.response,
            provider: entry.provider,
            attempts: entry.attempts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ScriptedProvider;

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cassette.jsonl");
        let requests: Vec<_> = ["a", "b", "a"].iter().map(|t| PromptRequest::new(*t, 3)).collect();

        let recorder =
            RecordingProvider::new(Box::new(ScriptedProvider::from_responses(["1", "2", "3"])), &path).unwrap();
        let recorded: Vec<_> = requests.iter().map(|r| recorder.complete(r).unwrap()).collect();

        let replay = ReplayProvider::open(&path).unwrap();
        let replayed: Vec<_> = requests.iter().map(|r| replay.complete(r).unwrap()).collect();
        assert_eq!(recorded, replayed);
        assert_eq!(replayed[2].text, "3");
        assert!(matches!(
            replay.complete(&PromptRequest::new("a", 3)),
            Err(LmError::CassetteMiss { .. })
        ));
    }

    #[test]
    fn entry_line_shape() {
        let req = PromptRequest::new("x", 0);
        let entry = CassetteEntry::new(
            &req,
            &Completion {
                text: "y".into(),
                provider: ProviderKind::Remote,
                attempts: 3,
            },
        );
        let value: serde_json::Value = serde_json::from_str(&entry.to_line()).unwrap();
        for field in ["key_hex", "request_digest", "response"] {
            assert!(value.get(field).is_some(), "{field}");
        }
        assert_eq!(entry.key_hex.len(), 16);
    }
}
