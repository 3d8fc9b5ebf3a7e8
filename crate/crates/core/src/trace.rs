//! JSONL run record.
//!
//! Every run is framed by one `run_header` and one `run_footer`; sequence
//! numbers are dense from zero. Payloads never carry wall-clock values, so a
//! trace is a pure function of the scenario, the seed and the provider.

use std::io::{self, Write};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    RunHeader,
    StepBegin,
    Context,
    Action,
    LmCall,
    Event,
    Observation,
    Warning,
    Score,
    Termination,
    RunFooter,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::RunHeader => "run_header",
            TraceKind::StepBegin => "step_begin",
            TraceKind::Context => "context",
            TraceKind::Action => "action",
            TraceKind::LmCall => "lm_call",
            TraceKind::Event => "event",
            TraceKind::Observation => "observation",
            TraceKind::Warning => "warning",
            TraceKind::Score => "score",
            TraceKind::Termination => "termination",
            TraceKind::RunFooter => "run_footer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub kind: TraceKind,
    pub step: Option<u64>,
    pub sim_time: u64,
    pub entity: Option<String>,
    pub payload: Value,
}

impl TraceEvent {
    /// One canonical JSON line, without the trailing newline.
    pub fn to_line(&self) -> String {
        canonical::to_string(self).expect("trace events always serialize")
    }

    pub fn from_line(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line)
    }
}

/// An event produced inside an entity call, before the engine stamps it
/// with a sequence number, step and time.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDraft {
    pub kind: TraceKind,
    pub entity: Option<String>,
    pub payload: Value,
}

impl TraceDraft {
    pub fn new(kind: TraceKind, entity: impl Into<String>, payload: Value) -> Self {
        TraceDraft {
            kind,
            entity: Some(entity.into()),
            payload,
        }
    }
}

pub trait TraceSink: Send {
    fn emit(&mut self, event: &TraceEvent) -> io::Result<()>;

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Writes one canonical line per event.
pub struct JsonlSink<W: Write + Send> {
    writer: W,
}

impl<W: Write + Send> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        JsonlSink { writer }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write + Send> TraceSink for JsonlSink<W> {
    fn emit(&mut self, event: &TraceEvent) -> io::Result<()> {
        self.writer.write_all(event.to_line().as_bytes())?;
        self.writer.write_all(b"\n")
    }

    fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

/// In-memory sink; clones share the same buffer.
#[derive(Clone, Default)]
pub struct MemorySink {
    events: Arc<Mutex<Vec<TraceEvent>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.events.lock().clone()
    }

    pub fn lines(&self) -> Vec<String> {
        self.events.lock().iter().map(TraceEvent::to_line).collect()
    }

    /// The whole trace as JSONL bytes, identical to what [`JsonlSink`] writes.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for line in self.lines() {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

impl TraceSink for MemorySink {
    fn emit(&mut self, event: &TraceEvent) -> io::Result<()> {
        self.events.lock().push(event.clone());
        Ok(())
    }
}

/// Fans every event out to several sinks.
pub struct TeeSink {
    sinks: Vec<Box<dyn TraceSink>>,
}

impl TeeSink {
    pub fn new(sinks: Vec<Box<dyn TraceSink>>) -> Self {
        TeeSink { sinks }
    }
}

impl TraceSink for TeeSink {
    fn emit(&mut self, event: &TraceEvent) -> io::Result<()> {
        for sink in &mut self.sinks {
            sink.emit(event)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        for sink in &mut self.sinks {
            sink.flush()?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TraceSchemaError {
    #[error("line {line}: not a trace event: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("line {line}: expected seq {expected}, found {found}")]
    SeqGap { line: usize, expected: u64, found: u64 },
    #[error("trace must start with run_header")]
    MissingHeader,
    #[error("trace must end with run_footer")]
    MissingFooter,
    #[error("line {line}: {kind} may only appear once")]
    DuplicateFraming { line: usize, kind: &'static str },
    #[error("line {line}: lm_call is missing `{field}`")]
    LmCallField { line: usize, field: &'static str },
    #[error("trace is empty")]
    Empty,
}

/// Checks the framing and field rules every trace must satisfy.
pub fn validate_lines<S: AsRef<str>>(lines: &[S]) -> Result<Vec<TraceEvent>, TraceSchemaError> {
    if lines.is_empty() {
        return Err(TraceSchemaError::Empty);
    }
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let event = TraceEvent::from_line(line.as_ref()).map_err(|e| TraceSchemaError::Malformed {
            line: i,
            detail: e.to_string(),
        })?;
        if event.seq != i as u64 {
            return Err(TraceSchemaError::SeqGap {
                line: i,
                expected: i as u64,
                found: event.seq,
            });
        }
        let last = i + 1 == lines.len();
        match event.kind {
            TraceKind::RunHeader if i != 0 => {
                return Err(TraceSchemaError::DuplicateFraming {
                    line: i,
                    kind: "run_header",
                })
            }
            TraceKind::RunFooter if !last => {
                return Err(TraceSchemaError::DuplicateFraming {
                    line: i,
                    kind: "run_footer",
                })
            }
            TraceKind::LmCall => {
                for field in ["prompt_digest", "provider"] {
                    if event.payload.get(field).and_then(Value::as_str).is_none() {
                        return Err(TraceSchemaError::LmCallField { line: i, field });
                    }
                }
            }
            _ => {}
        }
        events.push(event);
    }
    if events[0].kind != TraceKind::RunHeader {
        return Err(TraceSchemaError::MissingHeader);
    }
    if events.last().map(|e| e.kind) != Some(TraceKind::RunFooter) {
        return Err(TraceSchemaError::MissingFooter);
    }
    Ok(events)
}

/// Sequence number of the first line where two traces differ, if any.
pub fn first_divergence<A: AsRef<str>, B: AsRef<str>>(expected: &[A], actual: &[B]) -> Option<u64> {
    let shared = expected.len().min(actual.len());
    for i in 0..shared {
        if expected[i].as_ref() != actual[i].as_ref() {
            return Some(i as u64);
        }
    }
    if expected.len() != actual.len() {
        Some(shared as u64)
    } else {
        None
    }
}
