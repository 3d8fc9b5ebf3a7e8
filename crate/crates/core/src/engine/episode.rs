use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{EngineError, EngineKind, RunConfig, StepRecord, WakeQueue};
use crate::components::gm::{
    perceive_spec, resolve_spec, termination_spec, DispatchMode, RubricScorer, NEXT_ACTING_TAG, NEXT_WAKE_TAG,
    PERCEIVE_TAG, TERMINATE_TAG,
};
use crate::kernel::{Action, ActionPayload, ActionSpec, CallError, Entity, EntityId, Env, Observation};
use crate::lm::LanguageModel;
use crate::trace::{TraceDraft, TraceEvent, TraceKind, TraceSink};

const ENGINE: &str = "engine";
const DEFAULT_CALL: &str = "What does {name} do next?";
const NEXT_ACTING_CALL: &str = "Whose turn is it to act next?";

#[derive(Debug, Clone, Copy)]
struct Clock {
    step: u64,
    sim_time: u64,
}

fn make_env<'a>(lm: &'a dyn LanguageModel, roster: &'a [EntityId], config: &RunConfig, clock: Clock) -> Env<'a> {
    Env {
        lm,
        root_seed: config.seed,
        step: clock.step,
        sim_time: clock.sim_time,
        roster,
        sampling: config.sampling,
    }
}

/// Assigns dense sequence numbers and writes to the sink.
struct Recorder {
    sink: Box<dyn TraceSink>,
    seq: u64,
    warnings: u64,
}

impl Recorder {
    fn emit(
        &mut self,
        kind: TraceKind,
        step: Option<u64>,
        sim_time: u64,
        entity: Option<&str>,
        payload: Value,
    ) -> io::Result<u64> {
        let seq = self.seq;
        let event = TraceEvent {
            seq,
            kind,
            step,
            sim_time,
            entity: entity.map(str::to_string),
            payload,
        };
        self.sink.emit(&event)?;
        self.seq += 1;
        if kind == TraceKind::Warning {
            self.warnings += 1;
        }
        Ok(seq)
    }

    fn drafts(&mut self, drafts: Vec<TraceDraft>, clock: Clock) -> io::Result<()> {
        for draft in drafts {
            self.emit(
                draft.kind,
                Some(clock.step),
                clock.sim_time,
                draft.entity.as_deref(),
                draft.payload,
            )?;
        }
        Ok(())
    }

    fn warn(&mut self, clock: Clock, entity: Option<&str>, code: &str, message: String) -> io::Result<()> {
        let payload = json!({ "code": code, "component": ENGINE, "message": message });
        self.emit(TraceKind::Warning, Some(clock.step), clock.sim_time, entity, payload)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreTotal {
    pub total: f64,
    pub count: u64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub steps: u64,
    pub terminated: bool,
    pub warnings: u64,
    pub actions: u64,
    pub scores: BTreeMap<String, ScoreTotal>,
    #[serde(skip)]
    pub records: Vec<StepRecord>,
}

/// A run in progress. Drive it with [`Episode::step`] until it returns
/// `None`, then call [`Episode::finish`] to write the footer.
pub struct Episode {
    actors: Vec<Entity>,
    gm: Entity,
    config: RunConfig,
    lm: Arc<dyn LanguageModel>,
    roster: Vec<EntityId>,
    recorder: Recorder,
    pool: Option<rayon::ThreadPool>,
    queue: WakeQueue,
    step: u64,
    last_actor: Option<usize>,
    terminated: bool,
    started: bool,
    finished: bool,
    actions: u64,
    records: Vec<StepRecord>,
}

impl Episode {
    pub fn new(
        actors: Vec<Entity>,
        gm: Entity,
        config: RunConfig,
        lm: Arc<dyn LanguageModel>,
        sink: Box<dyn TraceSink>,
    ) -> Result<Self, EngineError> {
        if actors.is_empty() {
            return Err(EngineError::NoActors);
        }
        if config.max_steps == 0 {
            return Err(EngineError::ZeroSteps);
        }
        let mut seen = HashSet::new();
        for entity in actors.iter().chain(std::iter::once(&gm)) {
            if !seen.insert(entity.name().to_string()) {
                return Err(EngineError::DuplicateEntity(entity.name().to_string()));
            }
        }
        let roster: Vec<EntityId> = actors.iter().map(|a| a.id().clone()).collect();
        if let Some(rotation) = &config.rotation {
            if rotation.is_empty() {
                return Err(EngineError::UnknownRotationActor(String::new()));
            }
            if let Some(unknown) = rotation.iter().find(|r| !roster.contains(r)) {
                return Err(EngineError::UnknownRotationActor(unknown.to_string()));
            }
        }
        match config.engine {
            EngineKind::Sequential if config.rotation.is_none() && !gm.answers(NEXT_ACTING_TAG) => {
                return Err(EngineError::MissingGmComponent(NEXT_ACTING_TAG.into()))
            }
            EngineKind::Asynchronous if !gm.answers(NEXT_WAKE_TAG) => {
                return Err(EngineError::MissingGmComponent(NEXT_WAKE_TAG.into()))
            }
            _ => {}
        }
        let pool = if config.engine == EngineKind::Simultaneous && config.threads != 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| EngineError::Pool(e.to_string()))?;
            Some(pool)
        } else {
            None
        };
        let mut queue = WakeQueue::new();
        if config.engine == EngineKind::Asynchronous {
            for (i, id) in roster.iter().enumerate() {
                queue
                    .push_with_seq(0, i as u64, id.clone())
                    .expect("roster names are unique");
            }
        }
        Ok(Episode {
            actors,
            gm,
            config,
            lm,
            roster,
            recorder: Recorder {
                sink,
                seq: 0,
                warnings: 0,
            },
            pool,
            queue,
            step: 0,
            last_actor: None,
            terminated: false,
            started: false,
            finished: false,
            actions: 0,
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn actors(&self) -> &[Entity] {
        &self.actors
    }

    pub fn gm(&self) -> &Entity {
        &self.gm
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn queue(&self) -> &WakeQueue {
        &self.queue
    }

    /// Sequence number the next trace event will get.
    pub fn next_seq(&self) -> u64 {
        self.recorder.seq
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// True once no further steps will run.
    pub fn is_done(&self) -> bool {
        self.terminated || self.step >= self.config.max_steps
    }

    /// Writes the run header and delivers the premise. Idempotent.
    pub fn start(&mut self) -> Result<(), EngineError> {
        if self.started {
            return Ok(());
        }
        self.started = true;
        let mut header = json!({
            "engine": self.config.engine.as_str(),
            "seed": self.config.seed,
            "max_steps": self.config.max_steps,
            "actors": self.roster,
            "gm": self.gm.name(),
        });
        for (key, value) in &self.config.header {
            header[key] = value.clone();
        }
        self.recorder.emit(TraceKind::RunHeader, None, 0, None, header)?;
        if !self.config.premise.is_empty() {
            let clock = Clock { step: 0, sim_time: 0 };
            let premise = self.config.premise.clone();
            for index in 0..=self.actors.len() {
                self.deliver(index, premise.clone(), None, clock)?;
            }
        }
        Ok(())
    }

    /// Runs one step. `None` once the episode is over.
    pub fn step(&mut self) -> Result<Option<StepRecord>, EngineError> {
        if self.finished {
            return Err(EngineError::Finished);
        }
        self.start()?;
        if self.is_done() {
            return Ok(None);
        }
        let record = match self.config.engine {
            EngineKind::Simultaneous => self.step_simultaneous()?,
            EngineKind::Sequential => self.step_sequential()?,
            EngineKind::Asynchronous => self.step_asynchronous()?,
        };
        self.step += 1;
        self.records.push(record.clone());
        Ok(Some(record))
    }

    /// Writes the footer and flushes the sink. Idempotent.
    pub fn finish(&mut self) -> Result<RunOutcome, EngineError> {
        self.start()?;
        let outcome = self.outcome();
        if !self.finished {
            self.finished = true;
            let payload = json!({
                "steps": outcome.steps,
                "terminated": outcome.terminated,
                "warnings": outcome.warnings,
                "actions": outcome.actions,
                "scores": outcome.scores,
            });
            let sim_time = self.records.last().map_or(0, |r| r.sim_time);
            self.recorder
                .emit(TraceKind::RunFooter, None, sim_time, None, payload)?;
            self.recorder.sink.flush()?;
        }
        Ok(outcome)
    }

    fn outcome(&self) -> RunOutcome {
        let mut scores = BTreeMap::new();
        if let Some(scorer) = self.gm.find::<RubricScorer>() {
            for (entity, (total, count)) in scorer.totals() {
                let mean = if count == 0 { 0.0 } else { total / count as f64 };
                scores.insert(entity, ScoreTotal { total, count, mean });
            }
        }
        RunOutcome {
            steps: self.step,
            terminated: self.terminated,
            warnings: self.recorder.warnings,
            actions: self.actions,
            scores,
            records: self.records.clone(),
        }
    }

    fn actor_spec(&self) -> ActionSpec {
        self.gm
            .action_request()
            .unwrap_or_else(|| ActionSpec::free(DEFAULT_CALL))
    }

    fn begin(&mut self, clock: Clock) -> Result<(), EngineError> {
        let payload = json!({ "engine": self.config.engine.as_str() });
        self.recorder
            .emit(TraceKind::StepBegin, Some(clock.step), clock.sim_time, None, payload)?;
        Ok(())
    }

    fn step_simultaneous(&mut self) -> Result<StepRecord, EngineError> {
        let clock = Clock {
            step: self.step,
            sim_time: self.step,
        };
        self.begin(clock)?;
        let spec = self.actor_spec();
        let results: Vec<(Result<Action, CallError>, Vec<TraceDraft>)> = {
            let env = make_env(&*self.lm, &self.roster, &self.config, clock);
            let act = |actor: &mut Entity| {
                let mut out = Vec::new();
                let result = actor.act(&env, &spec, &mut out);
                (result, out)
            };
            match &self.pool {
                Some(pool) => pool.install(|| self.actors.par_iter_mut().map(act).collect()),
                None => self.actors.iter_mut().map(act).collect(),
            }
        };
        let mut acted = Vec::with_capacity(results.len());
        for (index, (result, drafts)) in results.into_iter().enumerate() {
            self.recorder.drafts(drafts, clock)?;
            let action = self.settle(index, result, clock)?;
            acted.push((self.roster[index].clone(), action));
        }
        let mut events = Vec::with_capacity(acted.len());
        for (_, action) in &acted {
            events.push(self.resolve(action, clock)?);
        }
        self.finish_step(acted, events, clock)
    }

    fn step_sequential(&mut self) -> Result<StepRecord, EngineError> {
        let clock = Clock {
            step: self.step,
            sim_time: self.step,
        };
        self.begin(clock)?;
        let index = self.select_next(clock)?;
        let action = self.act_one(index, clock)?;
        self.last_actor = Some(index);
        let event = self.resolve(&action, clock)?;
        self.finish_step(vec![(self.roster[index].clone(), action)], vec![event], clock)
    }

    fn step_asynchronous(&mut self) -> Result<StepRecord, EngineError> {
        let (now, _, actor) = self.queue.pop().expect("every actor is always queued");
        let clock = Clock {
            step: self.step,
            sim_time: now,
        };
        self.begin(clock)?;
        let index = self
            .roster
            .iter()
            .position(|r| *r == actor)
            .expect("queued actors are on the roster");
        let action = self.act_one(index, clock)?;
        let event = self.resolve(&action, clock)?;
        let record = self.finish_step(vec![(actor.clone(), action)], vec![event], clock);
        let wake = self.next_wake(&actor, clock)?;
        self.queue.push(wake, actor).expect("the actor was just popped");
        record
    }

    fn finish_step(
        &mut self,
        acted: Vec<(EntityId, Action)>,
        events: Vec<String>,
        clock: Clock,
    ) -> Result<StepRecord, EngineError> {
        let dispatched = self.dispatch(&events, clock)?;
        let terminated = self.check_termination(clock)?;
        Ok(StepRecord {
            step: clock.step,
            sim_time: clock.sim_time,
            acted,
            events,
            dispatched,
            terminated,
        })
    }

    fn act_one(&mut self, index: usize, clock: Clock) -> Result<Action, EngineError> {
        let spec = self.actor_spec();
        let mut drafts = Vec::new();
        let result = {
            let env = make_env(&*self.lm, &self.roster, &self.config, clock);
            self.actors[index].act(&env, &spec, &mut drafts)
        };
        self.recorder.drafts(drafts, clock)?;
        self.settle(index, result, clock)
    }

    /// Records an actor's action; a failed actor "does nothing".
    fn settle(&mut self, index: usize, result: Result<Action, CallError>, clock: Clock) -> Result<Action, EngineError> {
        let actor = self.roster[index].clone();
        let action = match result {
            Ok(action) => action,
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                self.recorder
                    .warn(clock, Some(actor.as_str()), "actor_failed", e.to_string())?;
                Action::free(actor.clone(), "does nothing")
            }
        };
        let payload = serde_json::to_value(&action).expect("actions serialize");
        self.recorder.emit(
            TraceKind::Action,
            Some(clock.step),
            clock.sim_time,
            Some(actor.as_str()),
            payload,
        )?;
        self.actions += 1;
        Ok(action)
    }

    /// One GM call. Non-fatal failures become a warning and `None`.
    fn call_gm(&mut self, spec: &ActionSpec, clock: Clock, code: &str) -> Result<Option<Action>, EngineError> {
        let mut drafts = Vec::new();
        let result = {
            let env = make_env(&*self.lm, &self.roster, &self.config, clock);
            self.gm.act(&env, spec, &mut drafts)
        };
        self.recorder.drafts(drafts, clock)?;
        match result {
            Ok(action) => Ok(Some(action)),
            Err(e) if e.is_fatal() => Err(e.into()),
            Err(e) => {
                let gm = self.gm.name().to_string();
                self.recorder.warn(clock, Some(&gm), code, e.to_string())?;
                Ok(None)
            }
        }
    }

    fn resolve(&mut self, action: &Action, clock: Clock) -> Result<String, EngineError> {
        let attempt = action.text().to_string();
        let spec = resolve_spec(action.actor.as_str(), &attempt);
        let event = match self.call_gm(&spec, clock, "resolve_failed")? {
            Some(resolved) => resolved.text().to_string(),
            None => attempt.clone(),
        };
        let payload = json!({ "actor": action.actor, "attempt": attempt, "text": event });
        let gm = self.gm.name().to_string();
        self.recorder
            .emit(TraceKind::Event, Some(clock.step), clock.sim_time, Some(&gm), payload)?;
        Ok(event)
    }

    /// Sends every event to every entity, actors first, then the GM.
    fn dispatch(&mut self, events: &[String], clock: Clock) -> Result<Vec<(EntityId, Observation)>, EngineError> {
        let policy = self.gm.dispatch_policy().unwrap_or_default();
        let asymmetric = policy.mode == DispatchMode::Asymmetric && self.gm.answers(PERCEIVE_TAG);
        let mut secrets_given = BTreeSet::new();
        let mut dispatched = Vec::new();
        for event in events {
            for index in 0..=self.actors.len() {
                let is_gm = index == self.actors.len();
                let name = if is_gm {
                    self.gm.name().to_string()
                } else {
                    self.roster[index].to_string()
                };
                let mut text = if asymmetric && !is_gm {
                    let spec = perceive_spec(&name, event);
                    match self.call_gm(&spec, clock, "perceive_failed")? {
                        Some(perceived) => perceived.text().to_string(),
                        None => event.clone(),
                    }
                } else {
                    event.clone()
                };
                if !is_gm && !secrets_given.contains(&name) {
                    if let Some(secret) = policy.secrets_for(&name, clock.step) {
                        text.push('\n');
                        text.push_str(&secret);
                        secrets_given.insert(name.clone());
                    }
                }
                let obs = self.deliver(index, text, Some(clock.step), clock)?;
                let recipient = if is_gm {
                    self.gm.id().clone()
                } else {
                    self.roster[index].clone()
                };
                dispatched.push((recipient, obs));
            }
        }
        Ok(dispatched)
    }

    /// Records an observation for entity `index` (the GM is one past the
    /// last actor) and has the entity observe it.
    fn deliver(
        &mut self,
        index: usize,
        text: String,
        step: Option<u64>,
        clock: Clock,
    ) -> Result<Observation, EngineError> {
        let source = self.gm.id().clone();
        let recipient = if index == self.actors.len() {
            self.gm.name().to_string()
        } else {
            self.roster[index].to_string()
        };
        let payload = json!({ "text": text, "source": source });
        let seq = self
            .recorder
            .emit(TraceKind::Observation, step, clock.sim_time, Some(&recipient), payload)?;
        let obs = Observation {
            text,
            sim_time: clock.sim_time,
            seq,
            source,
        };
        let mut drafts = Vec::new();
        let result = {
            let env = make_env(&*self.lm, &self.roster, &self.config, clock);
            let entity = if index == self.actors.len() {
                &mut self.gm
            } else {
                &mut self.actors[index]
            };
            entity.observe(&env, &obs, &mut drafts)
        };
        self.recorder.drafts(drafts, clock)?;
        match result {
            Ok(()) => {}
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => self
                .recorder
                .warn(clock, Some(&recipient), "observe_failed", e.to_string())?,
        }
        Ok(obs)
    }

    fn select_next(&mut self, clock: Clock) -> Result<usize, EngineError> {
        if let Some(rotation) = &self.config.rotation {
            let name = &rotation[(clock.step % rotation.len() as u64) as usize];
            return Ok(self
                .roster
                .iter()
                .position(|r| r == name)
                .expect("rotation checked at construction"));
        }
        let successor = self.last_actor.map_or(0, |i| (i + 1) % self.roster.len());
        let spec =
            ActionSpec::choice(NEXT_ACTING_CALL, self.roster.iter().map(|r| r.to_string())).with_tag(NEXT_ACTING_TAG);
        let chosen = match self.call_gm(&spec, clock, "next_acting_failed")? {
            Some(action) if !action.fallback => match &action.payload {
                ActionPayload::Choice { index, .. } => Some(*index),
                _ => None,
            },
            _ => None,
        };
        match chosen {
            Some(index) => Ok(index),
            None => {
                let gm = self.gm.name().to_string();
                let message = format!("no valid next actor; `{}` acts in turn", self.roster[successor]);
                self.recorder.warn(clock, Some(&gm), "next_acting_fallback", message)?;
                Ok(successor)
            }
        }
    }

    fn next_wake(&mut self, actor: &EntityId, clock: Clock) -> Result<u64, EngineError> {
        let now = clock.sim_time;
        let spec = ActionSpec::float(format!(
            "It is time {now}. {actor} has just acted. At what time should {actor} act next?"
        ))
        .with_tag(NEXT_WAKE_TAG)
        .with_param("subject", actor.as_str())
        .with_param("now", now.to_string());
        let answer = match self.call_gm(&spec, clock, "next_wake_failed")? {
            Some(Action {
                payload: ActionPayload::Number { value },
                ..
            }) => Some(value),
            _ => None,
        };
        match answer {
            Some(value) if value.is_finite() && value.floor() > now as f64 && value < u64::MAX as f64 => {
                Ok(value.floor() as u64)
            }
            other => {
                let gm = self.gm.name().to_string();
                let message = match other {
                    Some(value) => format!("wake time {value} for {actor} is not after {now}; using {}", now + 1),
                    None => format!("no wake time for {actor}; using {}", now + 1),
                };
                self.recorder.warn(clock, Some(&gm), "wake_clamped", message)?;
                Ok(now + 1)
            }
        }
    }

    fn check_termination(&mut self, clock: Clock) -> Result<bool, EngineError> {
        if !self.gm.answers(TERMINATE_TAG) {
            return Ok(false);
        }
        let terminated = matches!(
            self.call_gm(&termination_spec(), clock, "terminate_failed")?,
            Some(Action {
                payload: ActionPayload::Choice { index: 1, .. },
                ..
            })
        );
        if terminated {
            self.terminated = true;
            let gm = self.gm.name().to_string();
            let payload = json!({ "reason": "gm", "step": clock.step });
            self.recorder.emit(
                TraceKind::Termination,
                Some(clock.step),
                clock.sim_time,
                Some(&gm),
                payload,
            )?;
        }
        Ok(terminated)
    }
}

/// Runs an episode to completion.
pub fn run(
    actors: Vec<Entity>,
    gm: Entity,
    config: RunConfig,
    lm: Arc<dyn LanguageModel>,
    sink: Box<dyn TraceSink>,
) -> Result<RunOutcome, EngineError> {
    let mut episode = Episode::new(actors, gm, config, lm, sink)?;
    while episode.step()?.is_some() {}
    episode.finish()
}
