//! Append-only JSONL event log, replay and state hashing.
//!
//! The log is the single source of truth for a run. Replaying it folds the
//! state-bearing events into a [`StateSnapshot`] whose hash must equal the
//! hash of the live orchestrator's final snapshot.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::component::{Interval, Millis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub ts: Millis,
    pub seq: u64,
    #[serde(rename = "type")]
    pub kind: String,
    pub payload: Value,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("sequence gap: expected {expected}, got {got}")]
    SeqGap { expected: u64, got: u64 },
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
}

/// In-memory event log with an optional durable sink.
pub struct EventLog {
    records: Vec<EventRecord>,
    sink: Option<Box<dyn Write + Send>>,
    flush_each: bool,
    io_error: Option<io::Error>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("records", &self.records.len())
            .field("durable", &self.sink.is_some())
            .finish()
    }
}

impl EventLog {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            sink: None,
            flush_each: false,
            io_error: None,
        }
    }

    /// Log that also writes every record to `sink`. With `flush_each` the
    /// sink is flushed after each line.
    pub fn with_sink(sink: Box<dyn Write + Send>, flush_each: bool) -> Self {
        Self {
            sink: Some(sink),
            flush_each,
            ..Self::new()
        }
    }

    pub fn last_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.seq)
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn append_event(&mut self, record: EventRecord) -> Result<(), LogError> {
        let expected = self.last_seq() + 1;
        if record.seq != expected {
            return Err(LogError::SeqGap {
                expected,
                got: record.seq,
            });
        }
        if let Some(sink) = self.sink.as_mut() {
            let mut line = serde_json::to_vec(&record).expect("event records serialize");
            line.push(b'\n');
            sink.write_all(&line)?;
            if self.flush_each {
                sink.flush()?;
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Appends an event with the next sequence number. I/O failures are
    /// retained and reported by [`EventLog::finish`].
    pub fn record(&mut self, ts: Millis, kind: &str, payload: Value) {
        let record = EventRecord {
            ts,
            seq: self.last_seq() + 1,
            kind: kind.to_string(),
            payload,
        };
        if let Err(e) = self.append_event(record.clone()) {
            match e {
                LogError::IoFailure(io) => {
                    self.records.push(record);
                    self.io_error.get_or_insert(io);
                }
                other => unreachable!("record() assigns seq itself: {other}"),
            }
        }
    }

    pub fn finish(&mut self) -> Result<(), LogError> {
        if let Some(e) = self.io_error.take() {
            return Err(LogError::IoFailure(e));
        }
        if let Some(sink) = self.sink.as_mut() {
            sink.flush()?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("event records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn count(&self, kind: &str) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a EventRecord> + 'a {
        self.records.iter().filter(move |r| r.kind == kind)
    }
}

/// Parses a JSONL log and checks that sequence numbers run 1, 2, 3, ...
pub fn parse_log(text: &str) -> Result<Vec<EventRecord>, LogError> {
    if !text.is_empty() && !text.ends_with('\n') {
        let line = text.lines().count();
        return Err(LogError::CorruptLog {
            line,
            reason: "last record is not newline-terminated".into(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let rec: EventRecord = serde_json::from_str(line).map_err(|e| LogError::CorruptLog {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let expected = out.len() as u64 + 1;
        if rec.seq != expected {
            return Err(LogError::CorruptLog {
                line: i + 1,
                reason: format!("sequence gap: expected {expected}, got {}", rec.seq),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSnapshot {
    pub status: String,
    pub capacity: f64,
    pub window: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSnapshot {
    pub component_id: String,
    pub system_id: String,
    pub slot_id: String,
    pub state: String,
    pub agreed_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrantSnapshot {
    pub component_id: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSnapshot {
    pub phase: String,
    pub binding: BTreeMap<String, String>,
}

/// Registry, contract and pipeline state in canonical, hashable form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub components: BTreeMap<String, ComponentSnapshot>,
    pub contracts: BTreeMap<String, ContractSnapshot>,
    pub grants: BTreeMap<String, GrantSnapshot>,
    pub pipelines: BTreeMap<String, PipelineSnapshot>,
}

impl StateSnapshot {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("snapshot serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn field<'a>(rec: &'a EventRecord, line: usize, key: &str) -> Result<&'a Value, LogError> {
    rec.payload.get(key).ok_or_else(|| LogError::CorruptLog {
        line,
        reason: format!("{} without {key}", rec.kind),
    })
}

fn str_field(rec: &EventRecord, line: usize, key: &str) -> Result<String, LogError> {
    field(rec, line, key)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| LogError::CorruptLog {
            line,
            reason: format!("{}.{key} is not a string", rec.kind),
        })
}

fn num_field(rec: &EventRecord, line: usize, key: &str) -> Result<f64, LogError> {
    field(rec, line, key)?
        .as_f64()
        .ok_or_else(|| LogError::CorruptLog {
            line,
            reason: format!("{}.{key} is not a number", rec.kind),
        })
}

fn decode<T: serde::de::DeserializeOwned>(v: &Value, line: usize) -> Result<T, LogError> {
    serde_json::from_value(v.clone()).map_err(|e| LogError::CorruptLog {
        line,
        reason: e.to_string(),
    })
}

const CONTRACT_STATES: [&str; 7] = [
    "Reserved",
    "Serving",
    "Draining",
    "Completed",
    "Breached",
    "Cancelled",
    "Superseded",
];

fn contract_state_event(kind: &str) -> Option<&'static str> {
    let state = kind.strip_prefix("Contract")?;
    CONTRACT_STATES.iter().copied().find(|s| *s == state)
}

/// Folds the state-bearing events of `records` into a snapshot.
pub fn replay(records: &[EventRecord]) -> Result<StateSnapshot, LogError> {
    let mut s = StateSnapshot::default();
    for (i, rec) in records.iter().enumerate() {
        let line = i + 1;
        let missing = |what: &str, id: &str| LogError::CorruptLog {
            line,
            reason: format!("{} refers to unknown {what} {id}", rec.kind),
        };
        match rec.kind.as_str() {
            "ComponentRegistered" => {
                let d = field(rec, line, "descriptor")?;
                let id: String = decode(&d["id"], line)?;
                let capacity = d["posted_terms"]["capacity"].as_f64().unwrap_or_default();
                let window: Option<Interval> =
                    decode(&d["posted_terms"]["availability_window"], line).unwrap_or(None);
                s.components.insert(
                    id,
                    ComponentSnapshot {
                        status: "Available".into(),
                        capacity,
                        window,
                    },
                );
            }
            "ComponentStatus" => {
                let id = str_field(rec, line, "id")?;
                let status = str_field(rec, line, "status")?;
                s.components
                    .get_mut(&id)
                    .ok_or_else(|| missing("component", &id))?
                    .status = status;
            }
            "AvailabilityUpdated" => {
                let id = str_field(rec, line, "id")?;
                let capacity = num_field(rec, line, "capacity")?;
                let window: Option<Interval> = decode(field(rec, line, "window")?, line)?;
                let c = s
                    .components
                    .get_mut(&id)
                    .ok_or_else(|| missing("component", &id))?;
                c.capacity = capacity;
                c.window = window;
            }
            "GrantAdded" => {
                s.grants.insert(
                    str_field(rec, line, "holder")?,
                    GrantSnapshot {
                        component_id: str_field(rec, line, "component_id")?,
                        rate: num_field(rec, line, "rate")?,
                    },
                );
            }
            "GrantRate" => {
                let holder = str_field(rec, line, "holder")?;
                s.grants
                    .get_mut(&holder)
                    .ok_or_else(|| missing("grant", &holder))?
                    .rate = num_field(rec, line, "rate")?;
            }
            "GrantReleased" => {
                let holder = str_field(rec, line, "holder")?;
                s.grants
                    .remove(&holder)
                    .ok_or_else(|| missing("grant", &holder))?;
            }
            "ContractProposed" => {
                let c = field(rec, line, "contract")?;
                s.contracts.insert(
                    decode(&c["contract_id"], line)?,
                    ContractSnapshot {
                        component_id: decode(&c["component_id"], line)?,
                        system_id: decode(&c["system_id"], line)?,
                        slot_id: decode(&c["slot_id"], line)?,
                        state: "Proposed".into(),
                        agreed_price: decode(&c["agreed_price"], line)?,
                    },
                );
            }
            kind if contract_state_event(kind).is_some() => {
                let state = contract_state_event(kind).unwrap_or_default();
                let id = str_field(rec, line, "contract_id")?;
                s.contracts
                    .get_mut(&id)
                    .ok_or_else(|| missing("contract", &id))?
                    .state = state.to_string();
            }
            "PipelineBound" => {
                let system = str_field(rec, line, "system_id")?;
                let binding: BTreeMap<String, String> =
                    decode(field(rec, line, "binding")?, line)?;
                s.pipelines.insert(
                    system,
                    PipelineSnapshot {
                        phase: "Bound".into(),
                        binding,
                    },
                );
            }
            "PipelinePhase" => {
                let system = str_field(rec, line, "system_id")?;
                s.pipelines
                    .get_mut(&system)
                    .ok_or_else(|| missing("pipeline", &system))?
                    .phase = str_field(rec, line, "phase")?;
            }
            "SlotRebound" => {
                let system = str_field(rec, line, "system_id")?;
                let slot = str_field(rec, line, "slot_id")?;
                let contract = str_field(rec, line, "contract_id")?;
                s.pipelines
                    .get_mut(&system)
                    .ok_or_else(|| missing("pipeline", &system))?
                    .binding
                    .insert(slot, contract);
            }
            _ => {}
        }
    }
    Ok(s)
}

/// Parses and replays a JSONL log in one step.
pub fn replay_text(text: &str) -> Result<StateSnapshot, LogError> {
    replay(&parse_log(text)?)
}
