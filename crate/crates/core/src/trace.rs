//! Append-only run log written as JSONL: a header line followed by one
//! event per line in `seq` order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Publish,
    Deliver,
    /// A delivery swallowed by an injected link outage.
    DeliveryLost,
    Retransmit,
    Qos1Dropped,
    StateTransition,
    AgentEvent,
    PatientAction,
    Prediction,
    Annotation,
    TrialStart,
    TrialEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub tick: u64,
    pub source: String,
    pub kind: TraceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<String>,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub mode: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("trace is missing its header line")]
    MissingHeader,
    #[error("unsupported trace schema_version {0}")]
    SchemaVersion(u32),
    #[error("trace line {line}: seq {seq} does not follow {prev}")]
    Sequence { line: usize, seq: u64, prev: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(seed: u64, mode: &str) -> Self {
        Trace {
            header: TraceHeader { schema_version: TRACE_SCHEMA_VERSION, seed, mode: mode.to_string() },
            events: Vec::new(),
        }
    }

    /// Appends an event and returns its `seq`.
    pub fn push(&mut self, tick: u64, source: &str, kind: TraceKind, trial: Option<&str>, payload: Value) -> u64 {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent {
            seq,
            tick,
            source: source.to_string(),
            kind,
            trial: trial.map(str::to_string),
            payload,
        });
        seq
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        out
    }

    /// Parses a trace; `seq` must be strictly increasing.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let (_, first) = lines.next().ok_or(TraceError::MissingHeader)?;
        let header: TraceHeader =
            serde_json::from_str(&first?).map_err(|source| TraceError::Json { line: 1, source })?;
        if header.schema_version != TRACE_SCHEMA_VERSION {
            return Err(TraceError::SchemaVersion(header.schema_version));
        }
        let mut events: Vec<TraceEvent> = Vec::new();
        for (i, line) in lines {
            let e: TraceEvent =
                serde_json::from_str(&line?).map_err(|source| TraceError::Json { line: i + 1, source })?;
            if let Some(prev) = events.last() {
                if e.seq <= prev.seq {
                    return Err(TraceError::Sequence { line: i + 1, seq: e.seq, prev: prev.seq });
                }
            }
            events.push(e);
        }
        Ok(Trace { header, events })
    }

    pub fn from_jsonl(bytes: &[u8]) -> Result<Self, TraceError> {
        Self::read_jsonl(bytes)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TraceError> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Topic and parsed JSON body of a publish or delivery event.
pub fn message(e: &TraceEvent) -> Option<(&str, &Value)> {
    let topic = e.payload.get("topic")?.as_str()?;
    Some((topic, e.payload.get("payload").unwrap_or(&Value::Null)))
}
