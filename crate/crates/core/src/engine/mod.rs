//! Engines drive the act/resolve/observe loop between actors and the Game
//! Master.
//!
//! All three disciplines share one [`Episode`] stepper. Each step an actor
//! (or all of them) acts, the GM resolves each attempt with a `resolve`
//! request, the resulting events are dispatched as observations and the GM
//! is asked whether the episode is over.

mod episode;
mod queue;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernel::{Action, CallError, EntityId, Observation, Sampling};

pub use episode::{run, Episode, RunOutcome, ScoreTotal};
pub use queue::{AlreadyPending, WakeQueue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    #[serde(alias = "SIMULTANEOUS")]
    Simultaneous,
    #[serde(alias = "SEQUENTIAL")]
    Sequential,
    #[serde(alias = "ASYNCHRONOUS")]
    Asynchronous,
}

impl EngineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::Simultaneous => "simultaneous",
            EngineKind::Sequential => "sequential",
            EngineKind::Asynchronous => "asynchronous",
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "simultaneous" => Ok(EngineKind::Simultaneous),
            "sequential" => Ok(EngineKind::Sequential),
            "asynchronous" => Ok(EngineKind::Asynchronous),
            other => Err(format!("unknown engine `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub engine: EngineKind,
    pub max_steps: u64,
    pub seed: u64,
    /// Observed by every entity, the GM included, before the first step.
    pub premise: String,
    /// Fixed turn order for the sequential engine; overrides the GM's
    /// next-actor choice.
    pub rotation: Option<Vec<EntityId>>,
    /// Worker threads for simultaneous actor calls; 0 uses one per core.
    pub threads: usize,
    pub sampling: Sampling,
    /// Copied into the run header, e.g. a digest of the scenario document.
    pub header: BTreeMap<String, serde_json::Value>,
}

impl RunConfig {
    pub fn new(engine: EngineKind, max_steps: u64, seed: u64) -> Self {
        RunConfig {
            engine,
            max_steps,
            seed,
            premise: String::new(),
            rotation: None,
            threads: 0,
            sampling: Sampling::default(),
            header: BTreeMap::new(),
        }
    }

    pub fn with_premise(mut self, premise: impl Into<String>) -> Self {
        self.premise = premise.into();
        self
    }

    pub fn with_rotation(mut self, rotation: Vec<EntityId>) -> Self {
        self.rotation = Some(rotation);
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }
}

/// What happened in one engine step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub sim_time: u64,
    pub acted: Vec<(EntityId, Action)>,
    pub events: Vec<String>,
    pub dispatched: Vec<(EntityId, Observation)>,
    pub terminated: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("a run needs at least one actor")]
    NoActors,
    #[error("the Game Master lacks a component answering `{0}`")]
    MissingGmComponent(String),
    #[error("duplicate entity name `{0}`")]
    DuplicateEntity(String),
    #[error("rotation names unknown actor `{0}`")]
    UnknownRotationActor(String),
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error("cannot build the worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Call(#[from] CallError),
    #[error("trace sink failed: {0}")]
    Sink(#[from] std::io::Error),
    #[error("the episode has already finished")]
    Finished,
}
