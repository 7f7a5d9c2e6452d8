//! JSON request parsing with per-field diagnostics, and reply bodies.

use std::collections::BTreeMap;

use echo_core::filter::RejectionReason;
use echo_core::recommend::{CtrRow, Source};
use echo_core::tasks::{Answer, RejectReason, TaskKind};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{FieldError, Result, ServiceError};

struct Fields {
    obj: Map<String, Value>,
    errors: Vec<FieldError>,
}

impl Fields {
    fn parse(body: &[u8], allowed: &[&str], empty_ok: bool) -> Result<Self> {
        let blank = body.iter().all(u8::is_ascii_whitespace);
        let obj = if blank && empty_ok {
            Map::new()
        } else {
            match serde_json::from_slice::<Value>(body) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(ServiceError::BadRequest(vec![FieldError::new("$", "expected a JSON object")])),
                Err(e) => return Err(ServiceError::BadRequest(vec![FieldError::new("$", format!("invalid JSON: {e}"))])),
            }
        };
        let errors = obj
            .keys()
            .filter(|k| !allowed.contains(&k.as_str()))
            .map(|k| FieldError::new(k, "unknown field"))
            .collect();
        Ok(Fields { obj, errors })
    }

    fn string(&mut self, name: &str, required: bool) -> Option<String> {
        match self.obj.get(name) {
            Some(Value::String(s)) => Some(s.clone()),
            None | Some(Value::Null) if !required => None,
            None => {
                self.errors.push(FieldError::new(name, "required"));
                None
            }
            Some(_) => {
                self.errors.push(FieldError::new(name, "expected a string"));
                None
            }
        }
    }

    fn finish(self) -> Result<()> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(ServiceError::BadRequest(self.errors))
        }
    }
}

/// `POST /session` body: optional `{user_id}`; an empty body is allowed.
pub fn parse_create(body: &[u8]) -> Result<Option<String>> {
    let mut f = Fields::parse(body, &["user_id"], true)?;
    let user = f.string("user_id", false);
    if user.as_deref().is_some_and(|u| u.trim().is_empty()) {
        f.errors.push(FieldError::new("user_id", "must not be blank"));
    }
    f.finish()?;
    Ok(user)
}

pub fn parse_message(body: &[u8]) -> Result<String> {
    let mut f = Fields::parse(body, &["text"], false)?;
    let text = f.string("text", true);
    f.finish()?;
    Ok(text.expect("checked"))
}

pub fn parse_click(body: &[u8]) -> Result<String> {
    let mut f = Fields::parse(body, &["impression_id"], false)?;
    let id = f.string("impression_id", true);
    f.finish()?;
    Ok(id.expect("checked"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRequest {
    pub task_id: String,
    pub answer: Answer,
    pub read_latency_s: f64,
}

/// `{task_id, answer | abstain, read_latency_s}`: `answer` is an option index
/// or a one-word string; `abstain: true` replaces it.
pub fn parse_response(body: &[u8]) -> Result<ResponseRequest> {
    let mut f = Fields::parse(body, &["task_id", "answer", "abstain", "read_latency_s"], false)?;
    let task_id = f.string("task_id", true);
    let abstain = match f.obj.get("abstain") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => {
            f.errors.push(FieldError::new("abstain", "expected a boolean"));
            false
        }
    };
    let answer = match (f.obj.get("answer"), abstain) {
        (None | Some(Value::Null), true) => Some(Answer::Abstain),
        (None | Some(Value::Null), false) => {
            f.errors.push(FieldError::new("answer", "required unless abstain is true"));
            None
        }
        (Some(_), true) => {
            f.errors.push(FieldError::new("answer", "must be omitted when abstain is true"));
            None
        }
        (Some(Value::Number(n)), false) => match n.as_u64() {
            Some(i) => Some(Answer::Option(i as usize)),
            None => {
                f.errors.push(FieldError::new("answer", "option index must be a non-negative integer"));
                None
            }
        },
        (Some(Value::String(s)), false) => Some(Answer::Text(s.clone())),
        (Some(_), false) => {
            f.errors.push(FieldError::new("answer", "expected an option index or a string"));
            None
        }
    };
    let latency = match f.obj.get("read_latency_s") {
        Some(Value::Number(n)) => match n.as_f64() {
            Some(x) if x >= 0.0 && x.is_finite() => Some(x),
            _ => {
                f.errors.push(FieldError::new("read_latency_s", "must be a non-negative number"));
                None
            }
        },
        None => {
            f.errors.push(FieldError::new("read_latency_s", "required"));
            None
        }
        Some(_) => {
            f.errors.push(FieldError::new("read_latency_s", "expected a number of seconds"));
            None
        }
    };
    f.finish()?;
    Ok(ResponseRequest {
        task_id: task_id.expect("checked"),
        answer: answer.expect("checked"),
        read_latency_s: latency.expect("checked"),
    })
}

/// `?after=N`; absent means 0.
pub fn parse_after(query: Option<&str>) -> Result<u64> {
    let mut after = 0;
    let mut errors = Vec::new();
    for pair in query.unwrap_or("").split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        if k == "after" {
            match v.parse::<u64>() {
                Ok(n) => after = n,
                Err(_) => errors.push(FieldError::new("after", "expected a non-negative integer")),
            }
        } else {
            errors.push(FieldError::new(k, "unknown query parameter"));
        }
    }
    if errors.is_empty() {
        Ok(after)
    } else {
        Err(ServiceError::BadRequest(errors))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub user_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskView {
    pub task_id: String,
    pub feature_id: String,
    pub question: String,
    pub kind: TaskKind,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyView {
    pub survey_id: String,
    pub min_read_seconds: f64,
    pub tasks: Vec<TaskView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductView {
    pub product_id: String,
    pub title: String,
    pub vertical: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationView {
    pub source: Source,
    pub product: ProductView,
    pub rendered_text: String,
    pub impression_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageReply {
    pub session_id: String,
    pub turn_index: u64,
    pub taskable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<RejectionReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survey: Option<SurveyView>,
    /// The ECHO card when one is shown, otherwise the baseline card.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recommendation: Option<RecommendationView>,
    /// Every card shown for this message, one per arm.
    pub recommendations: Vec<RecommendationView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseReply {
    pub task_id: String,
    pub status: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    /// Required reading time, present on `too_fast` rejections.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_read_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_id: Option<String>,
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClickReply {
    pub impression_id: String,
    pub clicks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtrView {
    pub group: String,
    pub impressions: u64,
    pub clicks: u64,
    pub ctr: Option<f64>,
}

impl From<&CtrRow> for CtrView {
    fn from(r: &CtrRow) -> Self {
        CtrView {
            group: r.group.clone(),
            impressions: r.impressions,
            clicks: r.clicks,
            ctr: r.ctr_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtrTables {
    pub by_source: Vec<CtrView>,
    pub by_day: Vec<CtrView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReply {
    pub ctr: CtrTables,
    pub sigma: BTreeMap<String, f64>,
    pub feature_accuracy: BTreeMap<String, Option<f64>>,
    pub labels: BTreeMap<String, u64>,
    pub completion_rate: Option<f64>,
    pub surveys_shown: usize,
    pub surveys_completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventsPage {
    pub session_id: String,
    pub after: u64,
    /// Events in log order, in the same shape as `events.jsonl` lines.
    pub events: Vec<Value>,
    /// Pass as `after` to fetch the next page.
    pub last_event_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(e: ServiceError) -> Vec<(String, String)> {
        match e {
            ServiceError::BadRequest(v) => v.into_iter().map(|f| (f.field, f.problem)).collect(),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn response_variants() {
        let r = parse_response(br#"{"task_id":"t","answer":2,"read_latency_s":6}"#).unwrap();
        assert_eq!(r.answer, Answer::Option(2));
        let r = parse_response(br#"{"task_id":"t","answer":"blue","read_latency_s":6.5}"#).unwrap();
        assert_eq!(r.answer, Answer::Text("blue".into()));
        let r = parse_response(br#"{"task_id":"t","abstain":true,"read_latency_s":7}"#).unwrap();
        assert_eq!(r.answer, Answer::Abstain);
    }

    #[test]
    fn response_diagnostics_cover_every_bad_field() {
        let f = fields(parse_response(br#"{"answer":-1,"read_latency_s":"x","extra":1}"#).unwrap_err());
        let names: Vec<&str> = f.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"extra"));
        assert!(names.contains(&"task_id"));
        assert!(names.contains(&"answer"));
        assert!(names.contains(&"read_latency_s"));
        let f = fields(parse_response(br#"{"task_id":"t","answer":1,"abstain":true,"read_latency_s":1}"#).unwrap_err());
        assert_eq!(f, vec![("answer".to_string(), "must be omitted when abstain is true".to_string())]);
        let f = fields(parse_response(br#"{"task_id":"t","read_latency_s":1}"#).unwrap_err());
        assert_eq!(f[0].0, "answer");
    }

    #[test]
    fn malformed_json_and_non_objects() {
        assert_eq!(fields(parse_message(b"{").unwrap_err())[0].0, "$");
        assert_eq!(fields(parse_message(b"[1]").unwrap_err())[0].1, "expected a JSON object");
        assert_eq!(fields(parse_message(b"").unwrap_err())[0].0, "$");
        assert_eq!(fields(parse_message(br#"{"text":3}"#).unwrap_err())[0], ("text".into(), "expected a string".into()));
    }

    #[test]
    fn create_accepts_empty_body() {
        assert_eq!(parse_create(b"").unwrap(), None);
        assert_eq!(parse_create(br#"{"user_id":"u1"}"#).unwrap(), Some("u1".into()));
        assert_eq!(fields(parse_create(br#"{"user_id":" "}"#).unwrap_err())[0].0, "user_id");
    }

    #[test]
    fn after_query() {
        assert_eq!(parse_after(None).unwrap(), 0);
        assert_eq!(parse_after(Some("after=12")).unwrap(), 12);
        assert_eq!(fields(parse_after(Some("after=-1")).unwrap_err())[0].0, "after");
        assert_eq!(fields(parse_after(Some("page=2")).unwrap_err())[0].0, "page");
    }
}
