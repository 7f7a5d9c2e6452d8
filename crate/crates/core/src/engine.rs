//! The online loop: message → taskability → candidate pool → selection →
//! survey and recommendations; author responses and clicks feed the two
//! training loops. Every input and every derived outcome is appended to the
//! event log, and [`Engine::replay`] rebuilds the state from the inputs alone.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};
use crate::events::{
    ClickPayload, DecisionPayload, EventBody, EventLog, ImpressionOutcome, ImpressionPayload, MessagePayload,
    ModelUpdatePayload, RecommendationPayload, ResponsePayload,
};
use crate::features::{CandidatePool, FeatureEnsemble, PoolEntry, DEFAULT_EMBED_DIM};
use crate::filter::{FilterConfig, RejectionReason, TaskFilter, TaskabilityDecision};
use crate::recommend::{
    baseline_recommend, content_hash, ctr_report, recommend, Accounted, Catalog, CtrRow, Decision, Grouping,
    ImpressionLedger, ImpressionRequest, Source,
};
use crate::rng::RngSeed;
use crate::scalar::Scalar;
use crate::selector::{SelectionMode, SelectorOutput, SelectorParams, UncertaintyUpdate, META_DIM};
use crate::snapshot::{hex, Checksum};
use crate::tasks::{build_survey, AuthorResponse, ResponseStatus, Survey, SurveyConfig, SurveyTracker};
use crate::text::{featurize, key_tokens, tokenize, SparseVec, DEFAULT_DIM};
use crate::types::{AuthorValue, FeatureRegistry, FeatureValue, Message, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arms {
    pub echo: bool,
    pub baseline: bool,
}

impl Default for Arms {
    fn default() -> Self {
        Arms {
            echo: true,
            baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineParams {
    pub seed: u64,
    pub dim: usize,
    pub embed_dim: usize,
    pub k: usize,
    pub mode: SelectionMode,
    pub feature_learning_rate: f64,
    pub selector_learning_rate: f64,
    pub filter: FilterConfig,
    pub survey: SurveyConfig,
    pub display_threshold: f64,
    pub merge_window_ms: u64,
    /// An ECHO impression's reward is read this long after it was shown.
    pub reward_window_ms: u64,
    /// Messages before this timestamp get no recommendations.
    pub recommend_after_ms: u64,
    pub arms: Arms,
    /// Recompute every parameter checksum around every update.
    pub audit: bool,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            seed: 42,
            dim: DEFAULT_DIM,
            embed_dim: DEFAULT_EMBED_DIM,
            k: 4,
            mode: SelectionMode::SelectValues,
            feature_learning_rate: crate::features::DEFAULT_FEATURE_LEARNING_RATE,
            selector_learning_rate: 0.05,
            filter: FilterConfig::default(),
            survey: SurveyConfig::default(),
            display_threshold: 0.2,
            merge_window_ms: 10_000,
            reward_window_ms: 60_000,
            recommend_after_ms: 0,
            arms: Arms::default(),
            audit: true,
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(EchoError::InvalidParam(format!("{field}: {why}")));
        if self.dim == 0 {
            return bad("dim", "must be positive");
        }
        if self.embed_dim == 0 || self.embed_dim > self.dim {
            return bad("embed_dim", "must be in 1..=dim");
        }
        if self.k == 0 {
            return bad("k", "must be positive");
        }
        if self.survey.question_count == 0 {
            return bad("question_count", "must be positive");
        }
        if self.survey.question_count > self.k {
            return bad("question_count", "cannot exceed k");
        }
        if self.filter.question_count != self.survey.question_count {
            return bad("question_count", "filter and survey disagree");
        }
        if !(self.survey.min_read_seconds >= 0.0 && self.survey.min_read_seconds.is_finite()) {
            return bad("min_read_seconds", "must be a non-negative number");
        }
        for (field, v) in [
            ("feature_learning_rate", self.feature_learning_rate),
            ("selector_learning_rate", self.selector_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(field, "must be a positive number");
            }
        }
        if !self.display_threshold.is_finite() {
            return bad("display_threshold", "must be finite");
        }
        if !(0.0..=1.0).contains(&self.filter.gate_threshold) {
            return bad("gate_threshold", "must be in [0, 1]");
        }
        Ok(())
    }

    pub fn with_question_count(mut self, n: usize) -> Self {
        self.survey.question_count = n;
        self.filter.question_count = n;
        self
    }
}

/// Running tallies of the training-invariant checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCounters {
    pub feature_updates: u64,
    pub isolation_violations: u64,
    pub uncertainty_updates: u64,
    pub relevance_updates: u64,
    pub stop_gradient_violations: u64,
    pub dual_loop_violations: u64,
    pub abstentions: u64,
}

impl AuditCounters {
    pub fn clean(&self) -> bool {
        self.isolation_violations == 0 && self.stop_gradient_violations == 0 && self.dual_loop_violations == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationOutcome {
    pub source: Source,
    pub product_id: String,
    pub rendered_text: String,
    pub impression_id: String,
    pub outcome: ImpressionOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageOutcome<T> {
    pub turn_index: u64,
    pub decision: Option<TaskabilityDecision<T>>,
    pub survey: Option<Survey>,
    pub recommendations: Vec<RecommendationOutcome>,
}

impl<T> MessageOutcome<T> {
    pub fn is_taskable(&self) -> bool {
        self.decision.as_ref().is_some_and(|d| d.is_taskable)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseOutcome {
    pub status: ResponseStatus,
    pub feature_id: Option<String>,
    pub author_value: Option<AuthorValue>,
    /// True when the answer reached both training loops.
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct TaskContext<T> {
    feature_id: String,
    x: SparseVec<T>,
    predicted: FeatureValue<T>,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingReward<T> {
    session_id: String,
    opened_at: u64,
    selected: Vec<String>,
    meta: Vec<[T; META_DIM]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct SessionState {
    user_id: String,
    last_turn: Option<u64>,
    surveys: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyTally {
    pub correct: u64,
    pub total: u64,
}

impl AccuracyTally {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub feature_id: String,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub accuracy: Option<f64>,
    pub labels: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineMetrics {
    pub ctr_by_source: Vec<CtrRow>,
    pub ctr_by_day: Vec<CtrRow>,
    pub features: Vec<FeatureStat>,
    pub completion_rate: Option<f64>,
    pub surveys_shown: usize,
    pub surveys_completed: usize,
    pub audit: AuditCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelSnapshot<T> {
    ensemble: FeatureEnsemble<T>,
    selector: SelectorParams<T>,
}

#[derive(Debug, Clone)]
pub struct Engine<T: Scalar> {
    params: EngineParams,
    registry: FeatureRegistry,
    catalog: Catalog<T>,
    filter: TaskFilter<T>,
    ensemble: FeatureEnsemble<T>,
    selector: SelectorParams<T>,
    tracker: SurveyTracker,
    ledger: ImpressionLedger,
    log: EventLog,
    sessions: HashMap<String, SessionState>,
    task_context: HashMap<String, TaskContext<T>>,
    pending_rewards: BTreeMap<String, PendingReward<T>>,
    accuracy: Vec<AccuracyTally>,
    model_checksums: Vec<u64>,
    audit: AuditCounters,
    survey_counter: u64,
}

impl<T: Scalar> Engine<T> {
    pub fn new(registry: FeatureRegistry, catalog: Catalog<T>, params: EngineParams) -> Result<Self> {
        params.validate()?;
        if registry.is_empty() {
            return Err(EchoError::Registry("no features registered".into()));
        }
        if catalog.dim() != params.dim {
            return Err(EchoError::InvalidParam(format!(
                "catalog dimension {} differs from dim {}",
                catalog.dim(),
                params.dim
            )));
        }
        let ensemble = FeatureEnsemble::new(&registry, T::of(params.feature_learning_rate), params.embed_dim);
        let selector = SelectorParams::new(&registry, params.k, params.mode, T::of(params.selector_learning_rate));
        let model_checksums = ensemble.checksums();
        Ok(Engine {
            filter: TaskFilter::new(params.filter.clone(), registry.len()),
            ledger: ImpressionLedger::new(params.merge_window_ms),
            accuracy: vec![AccuracyTally::default(); registry.len()],
            params,
            registry,
            catalog,
            ensemble,
            selector,
            tracker: SurveyTracker::new(),
            log: EventLog::new(),
            sessions: HashMap::new(),
            task_context: HashMap::new(),
            pending_rewards: BTreeMap::new(),
            model_checksums,
            audit: AuditCounters::default(),
            survey_counter: 0,
        })
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn registry(&self) -> &FeatureRegistry {
        &self.registry
    }

    pub fn catalog(&self) -> &Catalog<T> {
        &self.catalog
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn ensemble(&self) -> &FeatureEnsemble<T> {
        &self.ensemble
    }

    pub fn selector(&self) -> &SelectorParams<T> {
        &self.selector
    }

    pub fn ledger(&self) -> &ImpressionLedger {
        &self.ledger
    }

    pub fn tracker(&self) -> &SurveyTracker {
        &self.tracker
    }

    pub fn audit(&self) -> AuditCounters {
        self.audit
    }

    pub fn has_session(&self, session_id: &str) -> bool {
        self.sessions.contains_key(session_id)
    }

    pub fn next_turn_index(&self, session_id: &str) -> u64 {
        self.sessions
            .get(session_id)
            .and_then(|s| s.last_turn)
            .map_or(0, |t| t + 1)
    }

    /// Checksum over all learned parameters.
    pub fn state_checksum(&self) -> u64 {
        let mut c = Checksum::default();
        c.word(self.ensemble.checksum());
        c.word(self.selector.checksum());
        c.finish()
    }

    pub fn snapshot(&self) -> Vec<u8> {
        crate::snapshot::encode(&ModelSnapshot {
            ensemble: self.ensemble.clone(),
            selector: self.selector.clone(),
        })
    }

    /// Checksum of the parameters stored in a [`Engine::snapshot`].
    pub fn snapshot_checksum(bytes: &[u8]) -> Result<u64> {
        let s: ModelSnapshot<T> = crate::snapshot::decode(bytes)?;
        let mut c = Checksum::default();
        c.word(s.ensemble.checksum());
        c.word(s.selector.checksum());
        Ok(c.finish())
    }

    /// Current model prediction for arbitrary text, outside the logged loop.
    pub fn predict(&self, feature_id: &str, text: &str) -> Result<FeatureValue<T>> {
        let x = featurize(text, self.params.dim);
        Ok(self.ensemble.model(&self.registry, feature_id)?.predict(&x))
    }

    fn close_rewards(&mut self, now: u64) {
        let due: Vec<String> = self
            .pending_rewards
            .iter()
            .filter(|(_, p)| now >= p.opened_at.saturating_add(self.params.reward_window_ms))
            .map(|(id, _)| id.clone())
            .collect();
        for impression_id in due {
            let p = self.pending_rewards.remove(&impression_id).expect("due reward is pending");
            let reward = self
                .ledger
                .get(&impression_id)
                .is_some_and(|imp| !imp.clicks.is_empty());
            let counters_before = self.selector.counters_checksum();
            self.selector
                .update_relevance(&p.selected, &p.meta, reward)
                .expect("selected features are registered");
            self.audit.relevance_updates += 1;
            if self.params.audit {
                if self.ensemble.checksums() != self.model_checksums {
                    self.audit.stop_gradient_violations += 1;
                }
                if self.selector.counters_checksum() != counters_before {
                    self.audit.dual_loop_violations += 1;
                }
            }
            self.log.record(
                &p.session_id,
                now,
                EventBody::ModelUpdate(ModelUpdatePayload::Relevance {
                    impression_id,
                    reward: u8::from(reward),
                    selected: p.selected,
                    checksum: hex(self.selector.weights_checksum()),
                }),
            );
        }
    }

    pub fn handle_message(&mut self, msg: &Message) -> Result<MessageOutcome<T>> {
        let state = self.sessions.get(&msg.session_id);
        if let Some(last) = state.and_then(|s| s.last_turn) {
            if msg.turn_index <= last {
                return Err(EchoError::InvalidParam(format!(
                    "turn_index {} not after {last} in session {}",
                    msg.turn_index, msg.session_id
                )));
            }
        }
        self.close_rewards(msg.timestamp_ms);
        let state = self.sessions.entry(msg.session_id.clone()).or_default();
        state.user_id = msg.user_id.clone();
        state.last_turn = Some(msg.turn_index);
        let (sid, ts) = (msg.session_id.as_str(), msg.timestamp_ms);
        self.log.record(
            sid,
            ts,
            EventBody::Message(MessagePayload {
                user_id: msg.user_id.clone(),
                turn_index: msg.turn_index,
                role: msg.author_role,
                text: msg.text.clone(),
            }),
        );
        let mut outcome = MessageOutcome {
            turn_index: msg.turn_index,
            decision: None,
            survey: None,
            recommendations: Vec::new(),
        };
        if msg.author_role != Role::User {
            return Ok(outcome);
        }
        self.filter.note_user_message(sid);
        let x: SparseVec<T> = featurize(&msg.text, self.params.dim);
        let decision = match self.filter.check_spam_greeting(&msg.user_id, &msg.text, ts) {
            Err(reason) => TaskabilityDecision::rejected(reason),
            Ok(()) => {
                let tokens = tokenize(&msg.text);
                self.filter
                    .decide_taskable(&self.registry, &msg.user_id, sid, &tokens, &x)
            }
        };
        self.log.record(
            sid,
            ts,
            EventBody::TaskabilityDecision(DecisionPayload {
                turn_index: msg.turn_index,
                is_taskable: decision.is_taskable,
                relevant_features: decision.relevant_features.clone(),
                rejection_reason: decision.rejection_reason,
            }),
        );
        let spam_like = matches!(
            decision.rejection_reason,
            Some(RejectionReason::Spam | RejectionReason::Greeting | RejectionReason::TooShort)
        );
        let selection = if decision.relevant_features.is_empty() || spam_like {
            None
        } else {
            Some(self.select(sid, msg.turn_index, &x, &decision)?)
        };
        let keys = key_tokens(&msg.text, self.params.survey.key_token_count);

        if let (true, Some((pool, sel))) = (decision.is_taskable, &selection) {
            if sel.selected.len() >= self.params.survey.question_count {
                self.survey_counter += 1;
                let n = self.sessions.get_mut(sid).expect("session registered");
                n.surveys += 1;
                let survey_id = format!("{sid}-q{}", n.surveys);
                let mut rng = RngSeed(self.params.seed).substream("survey", self.survey_counter);
                let survey = build_survey(
                    &survey_id,
                    sel,
                    pool,
                    &self.registry,
                    &msg.text,
                    &self.params.survey,
                    ts,
                    &mut rng,
                )?;
                for t in &survey.tasks {
                    let predicted = pool
                        .get(&t.feature_id)
                        .map(|e| e.value.clone())
                        .unwrap_or(FeatureValue::Abstain);
                    self.task_context.insert(
                        t.task_id.clone(),
                        TaskContext {
                            feature_id: t.feature_id.clone(),
                            x: x.clone(),
                            predicted,
                        },
                    );
                }
                self.filter.note_survey(sid);
                self.tracker.register(survey.clone());
                self.log.record(sid, ts, EventBody::SurveyShown(survey.clone()));
                outcome.survey = Some(survey);
            }
        }

        if !spam_like && ts >= self.params.recommend_after_ms {
            if self.params.arms.echo {
                let decision = match &selection {
                    Some((pool, sel)) => {
                        let values: Vec<_> = sel
                            .selected
                            .iter()
                            .filter_map(|id| {
                                let e = pool.get(id)?;
                                Some((self.registry.get(id).expect("registered"), &e.value))
                            })
                            .collect();
                        recommend(&values, &self.catalog, T::of(self.params.display_threshold), &keys)
                    }
                    None => Decision::Skip {
                        best_score: T::zero(),
                        flag: crate::recommend::SkipFlag::NoSignal,
                    },
                };
                let selected = selection.as_ref().map(|(_, s)| s.selected.clone()).unwrap_or_default();
                let meta = selection.as_ref().map(|(_, s)| s.selected_meta()).unwrap_or_default();
                if let Some(r) = self.present(sid, ts, Source::Echo, decision, selected, meta) {
                    outcome.recommendations.push(r);
                }
            }
            if self.params.arms.baseline {
                let decision = baseline_recommend(&msg.text, &self.catalog, &keys);
                if let Some(r) = self.present(sid, ts, Source::Baseline, decision, Vec::new(), Vec::new()) {
                    outcome.recommendations.push(r);
                }
            }
        }
        outcome.decision = Some(decision);
        Ok(outcome)
    }

    fn select(
        &self,
        session_id: &str,
        turn_index: u64,
        x: &SparseVec<T>,
        decision: &TaskabilityDecision<T>,
    ) -> Result<(CandidatePool<T>, SelectorOutput<T>)> {
        match self.params.mode {
            SelectionMode::SelectValues => {
                let pool = self.ensemble.predict_pool(
                    &self.registry,
                    session_id,
                    turn_index,
                    x,
                    &decision.relevant_features,
                    &decision.scores,
                )?;
                let sel = self.selector.score_and_select(&pool)?;
                Ok((pool, sel))
            }
            SelectionMode::SelectModels => {
                let blind = CandidatePool {
                    session_id: session_id.to_string(),
                    turn_index,
                    entries: decision
                        .relevant_features
                        .iter()
                        .map(|id| PoolEntry {
                            feature_id: id.clone(),
                            value: FeatureValue::Abstain,
                            gate_score: decision.scores[self.registry.position(id).expect("registered")],
                        })
                        .collect(),
                };
                let sel = self.selector.score_and_select(&blind)?;
                let pool =
                    self.ensemble
                        .predict_pool(&self.registry, session_id, turn_index, x, &sel.selected, &decision.scores)?;
                Ok((pool, sel))
            }
        }
    }

    fn present(
        &mut self,
        session_id: &str,
        ts: u64,
        source: Source,
        decision: Decision<T>,
        selected: Vec<String>,
        meta: Vec<[T; META_DIM]>,
    ) -> Option<RecommendationOutcome> {
        let (product_id, rendered_text, flag) = match &decision {
            Decision::Show {
                product_id,
                rendered_text,
                ..
            } => (Some(product_id.clone()), Some(rendered_text.clone()), None),
            Decision::Skip { flag, .. } => (None, None, Some(flag.as_str().to_string())),
        };
        self.log.record(
            session_id,
            ts,
            EventBody::Recommendation(RecommendationPayload {
                source,
                shown: decision.is_show(),
                product_id: product_id.clone(),
                score: decision.score().as_f64(),
                rendered_text: rendered_text.clone(),
                selected: selected.clone(),
                flag,
            }),
        );
        let (product_id, rendered_text) = (product_id?, rendered_text?);
        let vertical = self
            .catalog
            .get(&product_id)
            .map(|p| p.record.vertical.clone())
            .unwrap_or_default();
        let hash = content_hash(source, &product_id, &rendered_text);
        let (impression_id, accounted) = self.ledger.record_impression(&ImpressionRequest {
            session_id: session_id.to_string(),
            source,
            product_id: product_id.clone(),
            vertical,
            content_hash: hash.clone(),
            message_ms: ts,
        });
        let outcome = match accounted {
            Accounted::New => ImpressionOutcome::New,
            Accounted::Deduplicated => ImpressionOutcome::Deduplicated,
            Accounted::Merged => ImpressionOutcome::Merged,
        };
        if accounted == Accounted::New && source == Source::Echo && !selected.is_empty() {
            self.pending_rewards.insert(
                impression_id.clone(),
                PendingReward {
                    session_id: session_id.to_string(),
                    opened_at: ts,
                    selected,
                    meta,
                },
            );
        }
        self.log.record(
            session_id,
            ts,
            EventBody::Impression(ImpressionPayload {
                impression_id: impression_id.clone(),
                source,
                product_id: product_id.clone(),
                content_hash: hash,
                outcome,
            }),
        );
        Some(RecommendationOutcome {
            source,
            product_id,
            rendered_text,
            impression_id,
            outcome,
        })
    }

    pub fn handle_response(&mut self, session_id: &str, response: &AuthorResponse) -> Result<ResponseOutcome> {
        if !self.sessions.contains_key(session_id) {
            return Err(EchoError::UnknownSession(session_id.to_string()));
        }
        let ts = response.answered_at;
        self.close_rewards(ts);
        let owned = self
            .tracker
            .task(&response.task_id)
            .is_some_and(|t| t.session_id == session_id);
        let status = if owned {
            self.tracker.accept(response)
        } else {
            ResponseStatus::Rejected(crate::tasks::RejectReason::UnknownTask)
        };
        self.log.record(
            session_id,
            ts,
            EventBody::AuthorResponse(ResponsePayload {
                task_id: response.task_id.clone(),
                answer: response.answer.clone(),
                read_latency_s: response.read_latency_s,
                status,
            }),
        );
        let mut out = ResponseOutcome {
            status,
            feature_id: None,
            author_value: None,
            trained: false,
        };
        if !status.is_accepted() {
            return Ok(out);
        }
        let task = self.tracker.task(&response.task_id).expect("accepted task exists").clone();
        let spec = self.registry.get(&task.feature_id)?.clone();
        let author = task.interpret(&spec, &response.answer)?;
        out.feature_id = Some(task.feature_id.clone());
        out.author_value = Some(author.clone());
        if author.is_abstain() {
            self.audit.abstentions += 1;
            return Ok(out);
        }
        let ctx = self
            .task_context
            .remove(&response.task_id)
            .expect("every registered task has a context");
        let fi = self.registry.position(&ctx.feature_id).expect("registered");

        let tally = &mut self.accuracy[fi];
        tally.total += 1;
        if prediction_matches(&ctx.predicted, &author) {
            tally.correct += 1;
        }

        let weights_before = self.selector.weights_checksum();
        let counters_before = self.selector.counters_checksum();
        self.ensemble
            .update_from_author(&self.registry, &ctx.feature_id, &ctx.x, &author)?;
        let model = &self.ensemble.models[fi];
        self.audit.feature_updates += 1;
        self.log.record(
            session_id,
            ts,
            EventBody::ModelUpdate(ModelUpdatePayload::FeatureModel {
                feature_id: ctx.feature_id.clone(),
                task_id: response.task_id.clone(),
                update_count: model.update_count,
                checksum: hex(model.checksum()),
            }),
        );
        if self.params.audit {
            let now = self.ensemble.checksums();
            let touched_others = now
                .iter()
                .zip(&self.model_checksums)
                .enumerate()
                .any(|(j, (a, b))| j != fi && a != b);
            if touched_others || self.selector.weights_checksum() != weights_before {
                self.audit.isolation_violations += 1;
            }
            self.model_checksums = now;
        } else {
            self.model_checksums[fi] = self.ensemble.models[fi].checksum();
        }

        let update = self
            .selector
            .update_uncertainty(&ctx.feature_id, &ctx.predicted, &author)?;
        self.audit.uncertainty_updates += 1;
        if self.params.audit
            && (self.selector.weights_checksum() != weights_before
                || self.ensemble.checksums() != self.model_checksums)
        {
            self.audit.dual_loop_violations += 1;
        }
        debug_assert_ne!(self.selector.counters_checksum(), counters_before);
        if let UncertaintyUpdate::Applied { alpha, beta } = update {
            self.log.record(
                session_id,
                ts,
                EventBody::ModelUpdate(ModelUpdatePayload::Uncertainty {
                    feature_id: ctx.feature_id.clone(),
                    task_id: response.task_id.clone(),
                    alpha: alpha.as_f64(),
                    beta: beta.as_f64(),
                }),
            );
        }
        out.trained = true;
        Ok(out)
    }

    /// Records a click; returns the impression's click count.
    pub fn handle_click(&mut self, session_id: &str, impression_id: &str, timestamp_ms: u64) -> Result<usize> {
        let owned = self
            .ledger
            .get(impression_id)
            .is_some_and(|imp| imp.session_id == session_id);
        if !owned {
            return Err(EchoError::UnknownImpression(impression_id.to_string()));
        }
        self.close_rewards(timestamp_ms);
        let clicks = self.ledger.record_click(impression_id, timestamp_ms)?;
        self.log.record(
            session_id,
            timestamp_ms,
            EventBody::Click(ClickPayload {
                impression_id: impression_id.to_string(),
                clicks: clicks as u64,
            }),
        );
        Ok(clicks)
    }

    /// Re-applies one logged input event.
    pub fn apply_input(&mut self, event: &crate::events::SessionEvent) -> Result<()> {
        match &event.body {
            EventBody::Message(m) => {
                self.handle_message(&Message {
                    session_id: event.session_id.clone(),
                    user_id: m.user_id.clone(),
                    turn_index: m.turn_index,
                    author_role: m.role,
                    text: m.text.clone(),
                    timestamp_ms: event.timestamp_ms,
                })?;
            }
            EventBody::AuthorResponse(r) => {
                self.handle_response(
                    &event.session_id,
                    &AuthorResponse {
                        task_id: r.task_id.clone(),
                        answer: r.answer.clone(),
                        answered_at: event.timestamp_ms,
                        read_latency_s: r.read_latency_s,
                    },
                )?;
            }
            EventBody::Click(c) => {
                self.handle_click(&event.session_id, &c.impression_id, event.timestamp_ms)?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Rebuilds an engine from the input events of `log`.
    ///
    /// Fails when the regenerated log differs from `log`, which means the log
    /// was produced under other parameters, registry or catalog.
    pub fn replay(registry: FeatureRegistry, catalog: Catalog<T>, params: EngineParams, log: &EventLog) -> Result<Self> {
        let mut engine = Engine::new(registry, catalog, params)?;
        for e in log.iter().filter(|e| e.kind().is_input()) {
            engine.apply_input(e)?;
        }
        if engine.log.len() != log.len() {
            return Err(EchoError::Snapshot(format!(
                "replay produced {} events, log has {}",
                engine.log.len(),
                log.len()
            )));
        }
        if let Some((n, _)) = engine
            .log
            .iter()
            .zip(log.iter())
            .enumerate()
            .find(|(_, (a, b))| a != b)
        {
            return Err(EchoError::Snapshot(format!("replay diverges at log line {}", n + 1)));
        }
        Ok(engine)
    }

    pub fn feature_stats(&self) -> Vec<FeatureStat> {
        self.registry
            .specs()
            .iter()
            .enumerate()
            .map(|(i, s)| FeatureStat {
                feature_id: s.feature_id.clone(),
                sigma: self.selector.sigma(i).as_f64(),
                alpha: self.selector.alpha[i].as_f64(),
                beta: self.selector.beta[i].as_f64(),
                accuracy: self.accuracy[i].rate(),
                labels: self.accuracy[i].total,
            })
            .collect()
    }

    pub fn metrics(&self) -> EngineMetrics {
        let imps = self.ledger.impressions();
        EngineMetrics {
            ctr_by_source: ctr_report(imps, Grouping::Source),
            ctr_by_day: ctr_report(imps, Grouping::Day),
            features: self.feature_stats(),
            completion_rate: self.tracker.completion_rate(),
            surveys_shown: self.tracker.shown(),
            surveys_completed: self.tracker.completed(),
            audit: self.audit,
        }
    }
}

fn prediction_matches<T: Scalar>(predicted: &FeatureValue<T>, author: &AuthorValue) -> bool {
    match (predicted, author) {
        (FeatureValue::FreeText { text, .. }, AuthorValue::FreeText(a)) => text.eq_ignore_ascii_case(a),
        (p, a) => p.class_index().is_some() && p.class_index() == a.class_index(),
    }
}
