//! Append-only session event log.
//!
//! Each line of the on-disk form is one JSON object with exactly the fields
//! `event_id, session_id, kind, timestamp_ms, payload`. Event ids count up
//! from 1 within each session.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};
use crate::filter::RejectionReason;
use crate::recommend::Source;
use crate::tasks::{Answer, ResponseStatus, Survey};
use crate::types::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Message,
    TaskabilityDecision,
    SurveyShown,
    AuthorResponse,
    Impression,
    Click,
    ModelUpdate,
    Recommendation,
}

impl EventKind {
    /// Inputs drive the engine; every other kind is derived from them.
    pub fn is_input(self) -> bool {
        matches!(
            self,
            EventKind::Message | EventKind::AuthorResponse | EventKind::Click
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessagePayload {
    pub user_id: String,
    pub turn_index: u64,
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPayload {
    pub turn_index: u64,
    pub is_taskable: bool,
    pub relevant_features: Vec<String>,
    pub rejection_reason: Option<RejectionReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsePayload {
    pub task_id: String,
    pub answer: Answer,
    pub read_latency_s: f64,
    pub status: ResponseStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpressionOutcome {
    New,
    Deduplicated,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionPayload {
    pub impression_id: String,
    pub source: Source,
    pub product_id: String,
    pub content_hash: String,
    pub outcome: ImpressionOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickPayload {
    pub impression_id: String,
    /// Clicks on the impression after this one was recorded.
    pub clicks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum ModelUpdatePayload {
    FeatureModel {
        feature_id: String,
        task_id: String,
        update_count: u64,
        checksum: String,
    },
    Uncertainty {
        feature_id: String,
        task_id: String,
        alpha: f64,
        beta: f64,
    },
    Relevance {
        impression_id: String,
        reward: u8,
        selected: Vec<String>,
        checksum: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationPayload {
    pub source: Source,
    pub shown: bool,
    pub product_id: Option<String>,
    pub score: f64,
    pub rendered_text: Option<String>,
    pub selected: Vec<String>,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventBody {
    Message(MessagePayload),
    TaskabilityDecision(DecisionPayload),
    SurveyShown(Survey),
    AuthorResponse(ResponsePayload),
    Impression(ImpressionPayload),
    Click(ClickPayload),
    ModelUpdate(ModelUpdatePayload),
    Recommendation(RecommendationPayload),
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::Message(_) => EventKind::Message,
            EventBody::TaskabilityDecision(_) => EventKind::TaskabilityDecision,
            EventBody::SurveyShown(_) => EventKind::SurveyShown,
            EventBody::AuthorResponse(_) => EventKind::AuthorResponse,
            EventBody::Impression(_) => EventKind::Impression,
            EventBody::Click(_) => EventKind::Click,
            EventBody::ModelUpdate(_) => EventKind::ModelUpdate,
            EventBody::Recommendation(_) => EventKind::Recommendation,
        }
    }

    fn payload_value(&self) -> serde_json::Value {
        let v = match self {
            EventBody::Message(p) => serde_json::to_value(p),
            EventBody::TaskabilityDecision(p) => serde_json::to_value(p),
            EventBody::SurveyShown(p) => serde_json::to_value(p),
            EventBody::AuthorResponse(p) => serde_json::to_value(p),
            EventBody::Impression(p) => serde_json::to_value(p),
            EventBody::Click(p) => serde_json::to_value(p),
            EventBody::ModelUpdate(p) => serde_json::to_value(p),
            EventBody::Recommendation(p) => serde_json::to_value(p),
        };
        v.expect("payload serializes")
    }

    fn from_parts(kind: EventKind, payload: serde_json::Value) -> serde_json::Result<Self> {
        use serde_json::from_value;
        Ok(match kind {
            EventKind::Message => EventBody::Message(from_value(payload)?),
            EventKind::TaskabilityDecision => EventBody::TaskabilityDecision(from_value(payload)?),
            EventKind::SurveyShown => EventBody::SurveyShown(from_value(payload)?),
            EventKind::AuthorResponse => EventBody::AuthorResponse(from_value(payload)?),
            EventKind::Impression => EventBody::Impression(from_value(payload)?),
            EventKind::Click => EventBody::Click(from_value(payload)?),
            EventKind::ModelUpdate => EventBody::ModelUpdate(from_value(payload)?),
            EventKind::Recommendation => EventBody::Recommendation(from_value(payload)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionEvent {
    pub event_id: u64,
    pub session_id: String,
    pub timestamp_ms: u64,
    pub body: EventBody,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEvent {
    event_id: u64,
    session_id: String,
    kind: EventKind,
    timestamp_ms: u64,
    payload: serde_json::Value,
}

impl SessionEvent {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }

    pub fn to_json_line(&self) -> String {
        let wire = WireEvent {
            event_id: self.event_id,
            session_id: self.session_id.clone(),
            kind: self.kind(),
            timestamp_ms: self.timestamp_ms,
            payload: self.body.payload_value(),
        };
        serde_json::to_string(&wire).expect("event serializes")
    }

    pub fn from_json_line(line: &str) -> serde_json::Result<Self> {
        let wire: WireEvent = serde_json::from_str(line)?;
        Ok(SessionEvent {
            event_id: wire.event_id,
            session_id: wire.session_id,
            timestamp_ms: wire.timestamp_ms,
            body: EventBody::from_parts(wire.kind, wire.payload)?,
        })
    }
}

/// In-memory append-only log; single writer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<SessionEvent>,
    last_id: HashMap<String, u64>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event whose id must be exactly one past the session's last.
    pub fn append(&mut self, event: SessionEvent) -> Result<()> {
        let expected = self.next_id(&event.session_id);
        if event.event_id != expected {
            return Err(EchoError::OutOfOrder {
                session: event.session_id,
                expected,
                got: event.event_id,
            });
        }
        self.last_id.insert(event.session_id.clone(), event.event_id);
        self.events.push(event);
        Ok(())
    }

    /// Assigns the next id for the session and appends.
    pub fn record(&mut self, session_id: &str, timestamp_ms: u64, body: EventBody) -> &SessionEvent {
        let event = SessionEvent {
            event_id: self.next_id(session_id),
            session_id: session_id.to_string(),
            timestamp_ms,
            body,
        };
        self.append(event).expect("next id is always in order");
        self.events.last().expect("just pushed")
    }

    pub fn next_id(&self, session_id: &str) -> u64 {
        self.last_id.get(session_id).copied().unwrap_or(0) + 1
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SessionEvent> {
        self.events.iter()
    }

    pub fn sessions(&self) -> impl Iterator<Item = &String> {
        self.last_id.keys()
    }

    /// Events of one session with `event_id > after`.
    pub fn session_events(&self, session_id: &str, after: u64) -> Vec<&SessionEvent> {
        self.events
            .iter()
            .filter(|e| e.session_id == session_id && e.event_id > after)
            .collect()
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.events {
            writeln!(w, "{}", e.to_json_line())?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut log = EventLog::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let event = SessionEvent::from_json_line(&line).map_err(|e| EchoError::MalformedLog {
                line: n + 1,
                reason: e.to_string(),
            })?;
            log.append(event)?;
        }
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(text: &str) -> EventBody {
        EventBody::Message(MessagePayload {
            user_id: "u1".into(),
            turn_index: 0,
            role: Role::User,
            text: text.into(),
        })
    }

    #[test]
    fn ids_count_per_session() {
        let mut log = EventLog::new();
        assert_eq!(log.record("a", 1, msg("x")).event_id, 1);
        assert_eq!(log.record("a", 2, msg("y")).event_id, 2);
        assert_eq!(log.record("b", 3, msg("z")).event_id, 1);
        assert_eq!(log.session_events("a", 1).len(), 1);
    }

    #[test]
    fn out_of_order_append_is_rejected() {
        let mut log = EventLog::new();
        log.record("a", 1, msg("x"));
        let bad = SessionEvent {
            event_id: 5,
            session_id: "a".into(),
            timestamp_ms: 2,
            body: msg("y"),
        };
        assert!(matches!(log.append(bad), Err(EchoError::OutOfOrder { expected: 2, got: 5, .. })));
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn wire_format_has_exact_fields_in_order() {
        let mut log = EventLog::new();
        log.record("s1", 1_700_000_000_000, msg("How to make a blanket?"));
        let line = log.to_jsonl();
        assert!(line.starts_with(
            r#"{"event_id":1,"session_id":"s1","kind":"message","timestamp_ms":1700000000000,"payload":{"#
        ));
        assert!(line.ends_with("}\n"));
        assert!(!line.trim_end_matches('\n').ends_with(' '));
        let back = EventLog::read_jsonl(line.as_bytes()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn unknown_fields_are_malformed() {
        let line = r#"{"event_id":1,"session_id":"s","kind":"click","timestamp_ms":0,"payload":{"impression_id":"i","clicks":1},"extra":1}"#;
        assert!(matches!(
            EventLog::read_jsonl(line.as_bytes()),
            Err(EchoError::MalformedLog { line: 1, .. })
        ));
    }
}
