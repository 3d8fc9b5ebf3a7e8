//! One session: an engine thread plus the shared state HTTP handlers read
//! and the human mailbox it blocks on.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use fabula_core::components::actor::{HumanInput, HumanReply, PendingActionRequest};
use fabula_core::components::{ComponentRegistry, Resources};
use fabula_core::engine::Episode;
use fabula_core::lm::LanguageModel;
use fabula_core::prefab::{instantiate, PrefabRegistry, ScenarioDoc};
use fabula_core::trace::{TraceEvent, TraceSink};
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Auto,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Running,
    WaitingHuman,
    Paused,
    Done,
    Failed,
}

impl Status {
    pub fn is_final(self) -> bool {
        matches!(self, Status::Done | Status::Failed)
    }
}

/// What a waiting handler watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapshot {
    pub status: Status,
    pub events: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    Step,
    Run,
}

/// Why a control request was refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Refusal {
    Finished(Status),
    Busy(Status),
    NoPending,
    StaleRequest { expected: String },
    Invalid(String),
}

#[derive(Debug)]
struct State {
    status: Status,
    events: Vec<TraceEvent>,
    pending: Option<PendingActionRequest>,
    submission: Option<String>,
    executing: bool,
    command: Option<Command>,
    pause_requested: bool,
    closed: bool,
    error: Option<String>,
    steps: u64,
}

/// Serializable view of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub scenario: String,
    pub mode: Mode,
    pub status: Status,
    /// Seq of the last emitted event, -1 before the first.
    pub cursor: i64,
    pub steps: u64,
    pub pending: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct Session {
    id: String,
    scenario: ScenarioDoc,
    mode: Mode,
    human_timeout: Duration,
    state: Mutex<State>,
    wake: Condvar,
    watch: watch::Sender<Snapshot>,
}

impl Session {
    /// Creates the session PAUSED and starts its engine thread.
    pub fn spawn(
        id: String,
        scenario: ScenarioDoc,
        mode: Mode,
        human_timeout: Duration,
        lm: Arc<dyn LanguageModel>,
    ) -> Arc<Session> {
        let (watch, _) = watch::channel(Snapshot {
            status: Status::Paused,
            events: 0,
        });
        let session = Arc::new(Session {
            id,
            scenario,
            mode,
            human_timeout,
            state: Mutex::new(State {
                status: Status::Paused,
                events: Vec::new(),
                pending: None,
                submission: None,
                executing: false,
                command: None,
                pause_requested: false,
                closed: false,
                error: None,
                steps: 0,
            }),
            wake: Condvar::new(),
            watch,
        });
        let driver = session.clone();
        thread::Builder::new()
            .name(format!("session-{}", session.id))
            .spawn(move || drive(driver, lm))
            .expect("spawn session thread");
        session
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn view(&self) -> SessionView {
        let state = self.state.lock();
        SessionView {
            id: self.id.clone(),
            scenario: self.scenario.name.clone(),
            mode: self.mode,
            status: state.status,
            cursor: state.events.last().map_or(-1, |e| e.seq as i64),
            steps: state.steps,
            pending: state.pending.is_some(),
            error: state.error.clone(),
        }
    }

    pub fn status(&self) -> Status {
        self.state.lock().status
    }

    pub fn subscribe(&self) -> watch::Receiver<Snapshot> {
        self.watch.subscribe()
    }

    pub fn pending(&self) -> Option<PendingActionRequest> {
        self.state.lock().pending.clone()
    }

    /// Events with seq greater than `since`.
    pub fn events_since(&self, since: i64) -> Vec<TraceEvent> {
        let start = usize::try_from(since.saturating_add(1)).unwrap_or(0);
        let state = self.state.lock();
        state
            .events
            .get(start..)
            .map(<[TraceEvent]>::to_vec)
            .unwrap_or_default()
    }

    pub fn event_count(&self) -> usize {
        self.state.lock().events.len()
    }

    /// Asks for exactly one step.
    pub fn request_step(&self) -> Result<(), Refusal> {
        self.command(Command::Step)
    }

    /// Asks the session to continue per its mode: one step in STEP mode,
    /// until a human turn or the end in AUTO mode.
    pub fn request_resume(&self) -> Result<(), Refusal> {
        self.command(match self.mode {
            Mode::Auto => Command::Run,
            Mode::Step => Command::Step,
        })
    }

    fn command(&self, command: Command) -> Result<(), Refusal> {
        let mut state = self.state.lock();
        if state.status.is_final() {
            return Err(Refusal::Finished(state.status));
        }
        if state.executing {
            return Err(Refusal::Busy(state.status));
        }
        state.executing = true;
        state.pause_requested = false;
        state.command = Some(command);
        state.status = Status::Running;
        self.publish(&state);
        self.wake.notify_all();
        Ok(())
    }

    /// Stops an AUTO run after its current step.
    pub fn request_pause(&self) -> Result<Status, Refusal> {
        let mut state = self.state.lock();
        if state.status.is_final() {
            return Err(Refusal::Finished(state.status));
        }
        if state.executing {
            state.pause_requested = true;
        }
        Ok(state.status)
    }

    /// Validates a human answer against the pending request and hands it
    /// to the engine thread. A rejected answer changes nothing.
    pub fn submit(&self, request_id: &str, text: &str) -> Result<(), Refusal> {
        let mut state = self.state.lock();
        let Some(pending) = &state.pending else {
            return Err(Refusal::NoPending);
        };
        if pending.request_id != request_id {
            return Err(Refusal::StaleRequest {
                expected: pending.request_id.clone(),
            });
        }
        pending
            .spec
            .parse_answer(text)
            .map_err(|e| Refusal::Invalid(e.to_string()))?;
        state.pending = None;
        state.submission = Some(text.to_string());
        state.status = Status::Running;
        self.publish(&state);
        self.wake.notify_all();
        Ok(())
    }

    /// Stops the engine thread at its next checkpoint.
    pub fn close(&self) {
        let mut state = self.state.lock();
        state.closed = true;
        self.wake.notify_all();
    }

    fn publish(&self, state: &State) {
        self.watch.send_replace(Snapshot {
            status: state.status,
            events: state.events.len(),
        });
    }

    fn next_command(&self) -> Option<Command> {
        let mut state = self.state.lock();
        loop {
            if state.closed {
                return None;
            }
            if let Some(command) = state.command.take() {
                return Some(command);
            }
            self.wake.wait(&mut state);
        }
    }

    fn settle(&self, status: Status, steps: u64, error: Option<String>) {
        let mut state = self.state.lock();
        state.executing = false;
        state.pending = None;
        state.status = status;
        state.steps = steps;
        if error.is_some() {
            state.error = error;
        }
        self.publish(&state);
    }

    fn after_step(&self, steps: u64) -> (bool, bool) {
        let mut state = self.state.lock();
        state.steps = steps;
        let pause = std::mem::take(&mut state.pause_requested);
        (state.closed, pause)
    }
}

struct SessionSink(Arc<Session>);

impl TraceSink for SessionSink {
    fn emit(&mut self, event: &TraceEvent) -> std::io::Result<()> {
        let mut state = self.0.state.lock();
        state.events.push(event.clone());
        self.0.publish(&state);
        Ok(())
    }
}

/// The human channel: publishes the pending request and blocks the engine
/// thread until an answer, the timeout, or session close.
struct Mailbox(Arc<Session>);

impl HumanInput for Mailbox {
    fn await_action(&self, request: &PendingActionRequest, timeout: Option<Duration>) -> HumanReply {
        let session = &self.0;
        let deadline = Instant::now() + timeout.unwrap_or(session.human_timeout);
        let mut state = session.state.lock();
        state.pending = Some(request.clone());
        state.submission = None;
        state.status = Status::WaitingHuman;
        session.publish(&state);
        loop {
            if state.closed {
                state.pending = None;
                return HumanReply::Closed;
            }
            if let Some(text) = state.submission.take() {
                return HumanReply::Submitted(text);
            }
            if session.wake.wait_until(&mut state, deadline).timed_out() {
                if let Some(text) = state.submission.take() {
                    return HumanReply::Submitted(text);
                }
                state.pending = None;
                state.status = Status::Running;
                session.publish(&state);
                return HumanReply::TimedOut;
            }
        }
    }
}

fn drive(session: Arc<Session>, lm: Arc<dyn LanguageModel>) {
    let resources = Resources {
        human_input: Some(Arc::new(Mailbox(session.clone()))),
    };
    let built = instantiate(
        &session.scenario,
        &PrefabRegistry::builtin(),
        &ComponentRegistry::builtin(),
        &resources,
    )
    .map_err(|e| e.to_string())
    .and_then(|instance| {
        Episode::new(
            instance.actors,
            instance.gm,
            instance.config.with_threads(1),
            lm,
            Box::new(SessionSink(session.clone())),
        )
        .map_err(|e| e.to_string())
    });
    let mut episode = match built {
        Ok(episode) => episode,
        Err(e) => return session.settle(Status::Failed, 0, Some(e)),
    };
    if let Err(e) = episode.start() {
        return session.settle(Status::Failed, 0, Some(e.to_string()));
    }
    while let Some(command) = session.next_command() {
        loop {
            if let Err(e) = episode.step() {
                log::warn!("session {} failed: {e}", session.id);
                return session.settle(Status::Failed, episode.steps_taken(), Some(e.to_string()));
            }
            let steps = episode.steps_taken();
            let (closed, pause) = session.after_step(steps);
            if closed {
                return;
            }
            if episode.is_done() {
                return match episode.finish() {
                    Ok(_) => session.settle(Status::Done, steps, None),
                    Err(e) => session.settle(Status::Failed, steps, Some(e.to_string())),
                };
            }
            if command == Command::Step || pause {
                session.settle(Status::Paused, steps, None);
                break;
            }
        }
    }
}
