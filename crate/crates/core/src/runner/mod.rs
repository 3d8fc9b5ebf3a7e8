//! Running scenario documents: provider construction, trace output,
//! replay verification and the cross-play harness.

mod crossplay;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::components::{ComponentRegistry, Resources};
use crate::engine::{self, EngineError, RunOutcome};
use crate::lm::{
    EchoHashProvider, LanguageModel, LmError, ProviderKind, RecordingProvider, RemoteProvider, ReplayProvider,
    ScriptDoc, ScriptedProvider,
};
use crate::prefab::{instantiate, PrefabRegistry, ProviderConfig, ScenarioDoc, ScenarioError};
use crate::trace::{first_divergence, JsonlSink, MemorySink, TeeSink, TraceEvent, TraceKind, TraceSink};

pub use crossplay::{crossplay, CrossplayRow, CrossplaySpec, CROSSPLAY_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Provider(#[from] LmError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Io(String),
    #[error("not a usable trace: {0}")]
    Trace(String),
}

impl RunnerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Scenario(ScenarioError::Io { .. }) => EXIT_RUNTIME,
            RunnerError::Scenario(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Command-line style overrides of a scenario's own settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub provider: Option<ProviderKind>,
    pub script: Option<PathBuf>,
    pub cassette: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_steps: Option<u64>,
    /// Worker threads for simultaneous steps; 0 means one per core.
    pub threads: usize,
}

/// A scenario plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub doc: ScenarioDoc,
    pub base_dir: PathBuf,
}

impl LoadedScenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let doc = ScenarioDoc::load(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedScenario { doc, base_dir })
    }

    pub fn new(doc: ScenarioDoc, base_dir: impl Into<PathBuf>) -> Self {
        LoadedScenario {
            doc,
            base_dir: base_dir.into(),
        }
    }

    fn resolve(&self, path: &str) -> PathBuf {
        let path = Path::new(path);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// The scenario's provider config with `opts` applied.
    pub fn provider_config(&self, opts: &RunOptions) -> ProviderConfig {
        let mut config = self
            .doc
            .provider
            .clone()
            .unwrap_or_else(|| ProviderConfig::new(ProviderKind::Scripted));
        if let Some(kind) = opts.provider {
            if kind == ProviderKind::Record && config.inner.is_none() {
                config.inner = Some(match config.kind {
                    ProviderKind::Record | ProviderKind::Replay => ProviderKind::Remote,
                    other => other,
                });
            }
            config.kind = kind;
        }
        config
    }

    fn script(&self, config: &ProviderConfig, opts: &RunOptions) -> Result<ScriptDoc, LmError> {
        if let Some(path) = &opts.script {
            return ScriptDoc::load(path);
        }
        if let Some(path) = &config.script {
            return ScriptDoc::load(&self.resolve(path));
        }
        if let Some(inline) = &config.responses {
            return serde_json::from_value(inline.clone()).map_err(|e| LmError::Config(format!("responses: {e}")));
        }
        Err(LmError::Config("the scripted provider needs a script".into()))
    }

    fn cassette_path(&self, config: &ProviderConfig, opts: &RunOptions) -> Result<PathBuf, LmError> {
        match (&opts.cassette, &config.cassette) {
            (Some(path), _) => Ok(path.clone()),
            (None, Some(path)) => Ok(self.resolve(path)),
            (None, None) => Err(LmError::Config("record and replay need a cassette path".into())),
        }
    }

    fn base_provider(
        &self,
        kind: ProviderKind,
        config: &ProviderConfig,
        opts: &RunOptions,
    ) -> Result<Box<dyn LanguageModel>, LmError> {
        match kind {
            ProviderKind::Scripted => Ok(Box::new(ScriptedProvider::new(self.script(config, opts)?))),
            ProviderKind::EchoHash => Ok(Box::new(EchoHashProvider)),
            ProviderKind::Remote => Ok(Box::new(RemoteProvider::from_env()?)),
            ProviderKind::Replay => Ok(Box::new(ReplayProvider::open(&self.cassette_path(config, opts)?)?)),
            ProviderKind::Record => Err(LmError::Config("a recording cannot wrap another recording".into())),
        }
    }

    /// Builds the provider a run will use. Recording starts a fresh
    /// cassette file.
    pub fn provider(&self, opts: &RunOptions) -> Result<Arc<dyn LanguageModel>, LmError> {
        let config = self.provider_config(opts);
        if config.kind == ProviderKind::Record {
            let inner_kind = config.inner.unwrap_or(ProviderKind::Remote);
            let inner = self.base_provider(inner_kind, &config, opts)?;
            let path = self.cassette_path(&config, opts)?;
            File::create(&path).map_err(|e| LmError::Io(format!("{}: {e}", path.display())))?;
            return Ok(Arc::new(RecordingProvider::new(inner, &path)?));
        }
        Ok(Arc::from(self.base_provider(config.kind, &config, opts)?))
    }
}

/// Runs a scenario with an explicit provider, writing the trace to `sink`.
pub fn run_with_provider(
    scenario: &LoadedScenario,
    opts: &RunOptions,
    lm: Arc<dyn LanguageModel>,
    sink: Box<dyn TraceSink>,
    resources: &Resources,
) -> Result<RunOutcome, RunnerError> {
    let mut doc = scenario.doc.clone();
    if let Some(seed) = opts.seed {
        doc.seed = seed;
    }
    if let Some(max_steps) = opts.max_steps {
        doc.max_steps = max_steps;
    }
    let instance = instantiate(
        &doc,
        &PrefabRegistry::builtin(),
        &ComponentRegistry::builtin(),
        resources,
    )?;
    let config = instance.config.with_threads(opts.threads);
    Ok(engine::run(instance.actors, instance.gm, config, lm, sink)?)
}

pub fn run_scenario(
    scenario: &LoadedScenario,
    opts: &RunOptions,
    sink: Box<dyn TraceSink>,
    resources: &Resources,
) -> Result<RunOutcome, RunnerError> {
    let lm = scenario.provider(opts)?;
    run_with_provider(scenario, opts, lm, sink, resources)
}

/// Runs into memory; returns the JSONL trace and the outcome.
pub fn run_to_string(scenario: &LoadedScenario, opts: &RunOptions) -> Result<(String, RunOutcome), RunnerError> {
    let sink = MemorySink::new();
    let outcome = run_scenario(scenario, opts, Box::new(sink.clone()), &Resources::default())?;
    Ok((sink.to_jsonl(), outcome))
}

/// Runs and writes the trace to `out`.
pub fn run_to_file(scenario: &LoadedScenario, opts: &RunOptions, out: &Path) -> Result<RunOutcome, RunnerError> {
    let file = File::create(out).map_err(|e| RunnerError::Io(format!("{}: {e}", out.display())))?;
    run_scenario(
        scenario,
        opts,
        Box::new(JsonlSink::new(BufWriter::new(file))),
        &Resources::default(),
    )
}

/// Tees a run to a file and memory.
pub fn run_to_file_and_memory(
    scenario: &LoadedScenario,
    opts: &RunOptions,
    out: &Path,
) -> Result<(String, RunOutcome), RunnerError> {
    let file = File::create(out).map_err(|e| RunnerError::Io(format!("{}: {e}", out.display())))?;
    let memory = MemorySink::new();
    let tee = TeeSink::new(vec![
        Box::new(JsonlSink::new(BufWriter::new(file))),
        Box::new(memory.clone()),
    ]);
    let outcome = run_scenario(scenario, opts, Box::new(tee), &Resources::default())?;
    Ok((memory.to_jsonl(), outcome))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayVerdict {
    Identical,
    /// Sequence number of the first line that differs.
    Diverged(u64),
}

/// Seed and step cap recorded in a trace's header.
pub fn header_settings(trace: &str) -> Result<(u64, u64), RunnerError> {
    let first = trace
        .lines()
        .next()
        .ok_or_else(|| RunnerError::Trace("empty trace".into()))?;
    let header = TraceEvent::from_line(first).map_err(|e| RunnerError::Trace(e.to_string()))?;
    if header.kind != TraceKind::RunHeader {
        return Err(RunnerError::Trace("the first line is not a run_header".into()));
    }
    let get = |key: &str| {
        header
            .payload
            .get(key)
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| RunnerError::Trace(format!("run_header lacks `{key}`")))
    };
    Ok((get("seed")?, get("max_steps")?))
}

/// Re-runs `scenario` against a cassette with the seed and step cap from
/// `expected` and compares traces line by line.
pub fn replay(
    scenario: &LoadedScenario,
    expected: &str,
    cassette: &Path,
    threads: usize,
) -> Result<(ReplayVerdict, String), RunnerError> {
    let (seed, max_steps) = header_settings(expected)?;
    let opts = RunOptions {
        provider: Some(ProviderKind::Replay),
        cassette: Some(cassette.to_path_buf()),
        seed: Some(seed),
        max_steps: Some(max_steps),
        threads,
        ..RunOptions::default()
    };
    // A tampered cassette can abort the replay; the partial trace still
    // locates the divergence. A header mismatch means a different scenario,
    // so the run error stands.
    let sink = MemorySink::new();
    let result = run_scenario(scenario, &opts, Box::new(sink.clone()), &Resources::default());
    let actual = sink.to_jsonl();
    let expected_lines: Vec<&str> = expected.lines().collect();
    let actual_lines: Vec<&str> = actual.lines().collect();
    match (first_divergence(&expected_lines, &actual_lines), result) {
        (None, Ok(_)) => Ok((ReplayVerdict::Identical, actual)),
        (Some(seq), Ok(_)) => Ok((ReplayVerdict::Diverged(seq), actual)),
        (Some(seq), Err(_)) if seq > 0 && (seq as usize) < actual_lines.len() => {
            Ok((ReplayVerdict::Diverged(seq), actual))
        }
        (_, Err(e)) => Err(e),
    }
}
