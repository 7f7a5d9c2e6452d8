//! Session handling behind the HTTP API. Every mutating call appends its
//! events to the data directory before it returns.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use echo_core::engine::{Engine, EngineParams, MessageOutcome, RecommendationOutcome};
use echo_core::events::EventLog;
use echo_core::recommend::{Catalog, Source};
use echo_core::tasks::{AuthorResponse, ResponseStatus, RejectReason};
use echo_core::types::{FeatureRegistry, Message, Role};

use crate::clock::Clock;
use crate::config::EngineConfig;
use crate::error::{Result, ServiceError};
use crate::store::{SessionRecord, Store};
use crate::wire::{
    ClickReply, CtrTables, CtrView, EventsPage, MessageReply, MetricsReply, ProductView, RecommendationView,
    ResponseReply, ResponseRequest, SessionCreated, SurveyView, TaskView, Verdict,
};

pub struct App {
    engine: Engine<f64>,
    sessions: BTreeMap<String, SessionRecord>,
    store: Option<Store>,
    clock: Arc<dyn Clock>,
    persisted: usize,
}

impl App {
    /// An app without a data directory.
    pub fn in_memory(
        registry: FeatureRegistry,
        catalog: Catalog<f64>,
        params: EngineParams,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        Ok(App {
            engine: Engine::new(registry, catalog, params)?,
            sessions: BTreeMap::new(),
            store: None,
            clock,
            persisted: 0,
        })
    }

    /// Opens `data_dir`, replaying whatever it already holds.
    pub fn open(
        registry: FeatureRegistry,
        catalog: Catalog<f64>,
        params: EngineParams,
        data_dir: &Path,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        let (mut store, recovered) = Store::open(data_dir)?;
        let mut engine = Engine::new(registry, catalog, params)?;
        for e in recovered.log.iter().filter(|e| e.kind().is_input()) {
            // inputs that failed live fail identically here and left the same trace
            let _ = engine.apply_input(e);
        }
        if let Some(n) = first_divergence(&recovered.log, engine.log()) {
            return Err(ServiceError::Storage(format!(
                "{}: event log line {n} does not match a replay under the current configuration",
                data_dir.display()
            )));
        }
        store.append_events(&engine.log().events()[recovered.log.len()..])?;
        let mut sessions = BTreeMap::new();
        for s in recovered.sessions {
            sessions.insert(s.session_id.clone(), s);
        }
        if let Some(orphan) = engine.log().sessions().find(|s| !sessions.contains_key(*s)) {
            return Err(ServiceError::Storage(format!(
                "{}: events for session `{orphan}` without a session record",
                data_dir.display()
            )));
        }
        store.write_replay_inputs(engine.registry(), engine.catalog(), engine.params())?;
        Ok(App {
            persisted: engine.log().len(),
            engine,
            sessions,
            store: Some(store),
            clock,
        })
    }

    /// Loads the registry and catalog named by `cfg` and opens its data directory.
    pub fn from_config(cfg: &EngineConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        let params = cfg.engine_params();
        let registry = FeatureRegistry::load(&cfg.registry)
            .map_err(|e| ServiceError::Config(format!("registry {}: {e}", cfg.registry.display())))?;
        let catalog = Catalog::load(&cfg.catalog, params.dim)
            .map_err(|e| ServiceError::Config(format!("catalog {}: {e}", cfg.catalog.display())))?;
        Self::open(registry, catalog, params, &cfg.data_dir, clock)
    }

    pub fn engine(&self) -> &Engine<f64> {
        &self.engine
    }

    pub fn has_session(&self, session_id: &str) -> bool {
        self.sessions.contains_key(session_id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionRecord> {
        self.sessions.values()
    }

    fn commit(&mut self) -> Result<()> {
        if let Some(store) = &mut self.store {
            store.append_events(&self.engine.log().events()[self.persisted..])?;
        }
        self.persisted = self.engine.log().len();
        Ok(())
    }

    /// Persists whatever the engine logged, then passes `r` through.
    fn committed<T>(&mut self, r: echo_core::Result<T>) -> Result<T> {
        self.commit()?;
        Ok(r?)
    }

    fn session(&self, session_id: &str) -> Result<&SessionRecord> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::not_found("session", session_id))
    }

    pub fn create_session(&mut self, user_id: Option<String>) -> Result<SessionCreated> {
        let session_id = format!("s{:06}", self.sessions.len() + 1);
        let rec = SessionRecord {
            user_id: user_id.unwrap_or_else(|| session_id.clone()),
            session_id: session_id.clone(),
            created_ms: self.clock.now_ms(),
        };
        if let Some(store) = &mut self.store {
            store.append_session(&rec)?;
        }
        let out = SessionCreated {
            session_id,
            user_id: rec.user_id.clone(),
        };
        self.sessions.insert(rec.session_id.clone(), rec);
        Ok(out)
    }

    pub fn post_message(&mut self, session_id: &str, text: String) -> Result<MessageReply> {
        let user_id = self.session(session_id)?.user_id.clone();
        let msg = Message {
            session_id: session_id.to_string(),
            user_id,
            turn_index: self.engine.next_turn_index(session_id),
            author_role: Role::User,
            text,
            timestamp_ms: self.clock.now_ms(),
        };
        let r = self.engine.handle_message(&msg);
        let out = self.committed(r)?;
        Ok(self.message_reply(session_id, out))
    }

    fn message_reply(&self, session_id: &str, out: MessageOutcome<f64>) -> MessageReply {
        let recommendations: Vec<RecommendationView> = out.recommendations.iter().map(|r| self.card(r)).collect();
        let recommendation = recommendations
            .iter()
            .find(|r| r.source == Source::Echo)
            .or_else(|| recommendations.first())
            .cloned();
        MessageReply {
            session_id: session_id.to_string(),
            turn_index: out.turn_index,
            taskable: out.is_taskable(),
            rejection_reason: out.decision.as_ref().and_then(|d| d.rejection_reason),
            survey: out.survey.map(|s| SurveyView {
                survey_id: s.survey_id,
                min_read_seconds: self.engine.params().survey.min_read_seconds,
                tasks: s
                    .tasks
                    .into_iter()
                    .map(|t| TaskView {
                        task_id: t.task_id,
                        feature_id: t.feature_id,
                        question: t.question_text,
                        kind: t.kind,
                        options: t.options,
                    })
                    .collect(),
            }),
            recommendation,
            recommendations,
        }
    }

    fn card(&self, r: &RecommendationOutcome) -> RecommendationView {
        let (title, vertical) = self
            .engine
            .catalog()
            .get(&r.product_id)
            .map(|p| (p.record.title.clone(), p.record.vertical.clone()))
            .unwrap_or_default();
        RecommendationView {
            source: r.source,
            product: ProductView {
                product_id: r.product_id.clone(),
                title,
                vertical,
            },
            rendered_text: r.rendered_text.clone(),
            impression_id: r.impression_id.clone(),
        }
    }

    pub fn post_response(&mut self, session_id: &str, req: ResponseRequest) -> Result<ResponseReply> {
        self.session(session_id)?;
        let task = self
            .engine
            .tracker()
            .task(&req.task_id)
            .filter(|t| t.session_id == session_id)
            .ok_or_else(|| ServiceError::not_found("task", &req.task_id))?;
        let min_read = task.min_read_seconds;
        let response = AuthorResponse {
            task_id: req.task_id.clone(),
            answer: req.answer,
            answered_at: self.clock.now_ms(),
            read_latency_s: req.read_latency_s,
        };
        let r = self.engine.handle_response(session_id, &response);
        let out = self.committed(r)?;
        let (status, reason) = match out.status {
            ResponseStatus::Accepted => (Verdict::Accepted, None),
            ResponseStatus::Rejected(why) => (Verdict::Rejected, Some(why)),
        };
        Ok(ResponseReply {
            task_id: req.task_id,
            status,
            min_read_seconds: (reason == Some(RejectReason::TooFast)).then_some(min_read),
            reason,
            feature_id: out.feature_id,
            trained: out.trained,
        })
    }

    pub fn post_click(&mut self, session_id: &str, impression_id: &str) -> Result<ClickReply> {
        self.session(session_id)?;
        let owned = self
            .engine
            .ledger()
            .get(impression_id)
            .is_some_and(|i| i.session_id == session_id);
        if !owned {
            return Err(ServiceError::not_found("impression", impression_id));
        }
        let r = self.engine.handle_click(session_id, impression_id, self.clock.now_ms());
        let clicks = self.committed(r)?;
        Ok(ClickReply {
            impression_id: impression_id.to_string(),
            clicks,
        })
    }

    pub fn metrics(&self) -> MetricsReply {
        let m = self.engine.metrics();
        MetricsReply {
            ctr: CtrTables {
                by_source: m.ctr_by_source.iter().map(CtrView::from).collect(),
                by_day: m.ctr_by_day.iter().map(CtrView::from).collect(),
            },
            sigma: m.features.iter().map(|f| (f.feature_id.clone(), f.sigma)).collect(),
            feature_accuracy: m.features.iter().map(|f| (f.feature_id.clone(), f.accuracy)).collect(),
            labels: m.features.iter().map(|f| (f.feature_id.clone(), f.labels)).collect(),
            completion_rate: m.completion_rate,
            surveys_shown: m.surveys_shown,
            surveys_completed: m.surveys_completed,
        }
    }

    pub fn events(&self, session_id: &str, after: u64) -> Result<EventsPage> {
        self.session(session_id)?;
        let events: Vec<_> = self.engine.log().session_events(session_id, after);
        let last_event_id = events.last().map_or(after, |e| e.event_id);
        Ok(EventsPage {
            session_id: session_id.to_string(),
            after,
            events: events
                .iter()
                .map(|e| serde_json::from_str(&e.to_json_line()).expect("event lines are JSON"))
                .collect(),
            last_event_id,
        })
    }
}

fn first_divergence(persisted: &EventLog, replayed: &EventLog) -> Option<usize> {
    let (a, b) = (persisted.events(), replayed.events());
    if let Some(i) = a.iter().zip(b).position(|(x, y)| x != y) {
        return Some(i + 1);
    }
    (a.len() > b.len()).then_some(b.len() + 1)
}
