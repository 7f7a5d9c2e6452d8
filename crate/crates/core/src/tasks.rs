//! Author-labeling surveys: construction, response validation and
//! completion accounting.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};
use crate::events::{EventBody, EventLog};
use crate::features::CandidatePool;
use crate::scalar::Scalar;
use crate::selector::SelectorOutput;
use crate::text::{key_tokens, tokenize};
use crate::types::{AuthorValue, FeatureKind, FeatureRegistry, FeatureSpec, BINARY_LABELS};

pub const OPTION_COUNT: usize = 4;
pub const NOT_SURE: &str = "Not sure";
pub const OTHER: &str = "Other";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultipleChoice,
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTask {
    pub task_id: String,
    pub session_id: String,
    pub feature_id: String,
    pub question_text: String,
    pub kind: TaskKind,
    /// Exactly four for multiple choice, empty for free text.
    pub options: Vec<String>,
    pub predicted_option_index: Option<usize>,
    pub min_read_seconds: f64,
    pub created_at: u64,
}

impl LabelTask {
    /// Maps an accepted answer onto the feature's value space.
    ///
    /// Padding options on binary questions count as abstentions, and a
    /// free-text answer to a categorical question that names no option is an
    /// abstention too.
    pub fn interpret(&self, spec: &FeatureSpec, answer: &Answer) -> Result<AuthorValue> {
        let invalid = || EchoError::InvalidParam(format!("answer {answer:?} for task {}", self.task_id));
        match (self.kind, answer) {
            (_, Answer::Abstain) => Ok(AuthorValue::Abstain),
            (TaskKind::MultipleChoice, Answer::Option(i)) => {
                let label = self.options.get(*i).ok_or_else(invalid)?;
                Ok(match spec.kind {
                    FeatureKind::Binary => match label.as_str() {
                        l if l == BINARY_LABELS[0] => AuthorValue::Binary(true),
                        l if l == BINARY_LABELS[1] => AuthorValue::Binary(false),
                        _ => AuthorValue::Abstain,
                    },
                    FeatureKind::Categorical => {
                        let idx = spec.label_space.iter().position(|l| l == label).ok_or_else(invalid)?;
                        AuthorValue::Categorical(idx)
                    }
                    FeatureKind::FreeText => return Err(invalid()),
                })
            }
            (TaskKind::FreeText, Answer::Text(t)) => {
                let word = single_word(t).ok_or_else(invalid)?;
                Ok(match spec.kind {
                    FeatureKind::FreeText => AuthorValue::FreeText(word),
                    FeatureKind::Categorical => match_label(spec, &word)
                        .map(AuthorValue::Categorical)
                        .unwrap_or(AuthorValue::Abstain),
                    FeatureKind::Binary => match word.to_lowercase().as_str() {
                        "yes" | "y" | "true" => AuthorValue::Binary(true),
                        "no" | "n" | "false" => AuthorValue::Binary(false),
                        _ => AuthorValue::Abstain,
                    },
                })
            }
            _ => Err(invalid()),
        }
    }
}

/// First whitespace-delimited word, trimmed of surrounding punctuation.
pub fn single_word(text: &str) -> Option<String> {
    let w = text
        .split_whitespace()
        .next()?
        .trim_matches(|c: char| !c.is_alphanumeric());
    (!w.is_empty()).then(|| w.to_string())
}

fn match_label(spec: &FeatureSpec, word: &str) -> Option<usize> {
    let w = word.to_lowercase();
    spec.label_space
        .iter()
        .position(|l| l.to_lowercase() == w)
        .or_else(|| spec.label_space.iter().position(|l| tokenize(l).contains(&w)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    pub survey_id: String,
    pub session_id: String,
    pub turn_index: u64,
    pub tasks: Vec<LabelTask>,
    pub shown_at: u64,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Answer {
    Option(usize),
    Text(String),
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorResponse {
    pub task_id: String,
    pub answer: Answer,
    pub answered_at: u64,
    pub read_latency_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooFast,
    Duplicate,
    UnknownTask,
    InvalidAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum ResponseStatus {
    Accepted,
    Rejected(RejectReason),
}

impl ResponseStatus {
    pub fn is_accepted(self) -> bool {
        self == ResponseStatus::Accepted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub question_count: usize,
    pub min_read_seconds: f64,
    pub key_token_count: usize,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig {
            question_count: 4,
            min_read_seconds: 5.0,
            key_token_count: 3,
        }
    }
}

/// Features to ask about: the `count` highest-σ among `selection.selected`,
/// ties kept in selection order.
pub fn pick_features<T: Scalar>(selection: &SelectorOutput<T>, count: usize) -> Vec<String> {
    let mut picked: Vec<(usize, T, &String)> = selection
        .selected
        .iter()
        .enumerate()
        .map(|(rank, id)| (rank, selection.get(id).expect("selected is scored").sigma, id))
        .collect();
    picked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite sigma").then(a.0.cmp(&b.0)));
    picked.into_iter().take(count).map(|(_, _, id)| id.clone()).collect()
}

/// Four options containing `predicted`, shuffled; `None` when the label
/// space cannot fill them.
fn mc_options(spec: &FeatureSpec, predicted: &str, rng: &mut impl Rng) -> Option<(Vec<String>, usize)> {
    let mut options = match spec.kind {
        FeatureKind::Binary => vec![
            BINARY_LABELS[0].to_string(),
            BINARY_LABELS[1].to_string(),
            NOT_SURE.to_string(),
            OTHER.to_string(),
        ],
        FeatureKind::Categorical => {
            let rest: Vec<&String> = spec.label_space.iter().filter(|l| *l != predicted).collect();
            if rest.len() < OPTION_COUNT - 1 {
                return None;
            }
            let mut opts = vec![predicted.to_string()];
            opts.extend(rest.choose_multiple(rng, OPTION_COUNT - 1).map(|s| s.to_string()));
            opts
        }
        FeatureKind::FreeText => return None,
    };
    options.shuffle(rng);
    let idx = options.iter().position(|o| o == predicted)?;
    Some((options, idx))
}

#[allow(clippy::too_many_arguments)]
pub fn build_survey<T: Scalar>(
    survey_id: &str,
    selection: &SelectorOutput<T>,
    pool: &CandidatePool<T>,
    registry: &FeatureRegistry,
    message_text: &str,
    config: &SurveyConfig,
    created_at: u64,
    rng: &mut impl Rng,
) -> Result<Survey> {
    if selection.selected.len() < config.question_count {
        return Err(EchoError::InvalidParam(format!(
            "{} selected features, survey needs {}",
            selection.selected.len(),
            config.question_count
        )));
    }
    let tokens = key_tokens(message_text, config.key_token_count);
    let mut tasks = Vec::with_capacity(config.question_count);
    for (n, feature_id) in pick_features(selection, config.question_count).into_iter().enumerate() {
        let spec = registry.get(&feature_id)?;
        let predicted = pool
            .get(&feature_id)
            .and_then(|e| spec.label_text(&e.value));
        let mc = predicted.as_deref().and_then(|p| mc_options(spec, p, rng));
        let (kind, options, predicted_option_index) = match mc {
            Some((opts, idx)) => (TaskKind::MultipleChoice, opts, Some(idx)),
            None => (TaskKind::FreeText, Vec::new(), None),
        };
        tasks.push(LabelTask {
            task_id: format!("{survey_id}-t{}", n + 1),
            session_id: pool.session_id.clone(),
            feature_id,
            question_text: spec.question(&tokens),
            kind,
            options,
            predicted_option_index,
            min_read_seconds: config.min_read_seconds,
            created_at,
        });
    }
    Ok(Survey {
        survey_id: survey_id.to_string(),
        session_id: pool.session_id.clone(),
        turn_index: pool.turn_index,
        tasks,
        shown_at: created_at,
        completed: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct SurveyRecord {
    survey: Survey,
    answered: BTreeSet<String>,
}

/// Open and closed surveys with per-task answer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurveyTracker {
    surveys: BTreeMap<String, SurveyRecord>,
    task_to_survey: HashMap<String, String>,
}

impl SurveyTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, survey: Survey) {
        for t in &survey.tasks {
            self.task_to_survey.insert(t.task_id.clone(), survey.survey_id.clone());
        }
        self.surveys.insert(
            survey.survey_id.clone(),
            SurveyRecord {
                survey,
                answered: BTreeSet::new(),
            },
        );
    }

    pub fn task(&self, task_id: &str) -> Option<&LabelTask> {
        let sid = self.task_to_survey.get(task_id)?;
        self.surveys[sid].survey.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn survey(&self, survey_id: &str) -> Option<&Survey> {
        self.surveys.get(survey_id).map(|r| &r.survey)
    }

    pub fn survey_of_task(&self, task_id: &str) -> Option<&Survey> {
        self.survey(self.task_to_survey.get(task_id)?)
    }

    /// Validates `response`; on acceptance the task is closed.
    pub fn accept(&mut self, response: &AuthorResponse) -> ResponseStatus {
        let Some(sid) = self.task_to_survey.get(&response.task_id) else {
            return ResponseStatus::Rejected(RejectReason::UnknownTask);
        };
        let record = self.surveys.get_mut(sid).expect("indexed survey exists");
        if record.answered.contains(&response.task_id) {
            return ResponseStatus::Rejected(RejectReason::Duplicate);
        }
        let task = record
            .survey
            .tasks
            .iter()
            .find(|t| t.task_id == response.task_id)
            .expect("indexed task exists");
        if !(response.read_latency_s >= task.min_read_seconds) {
            return ResponseStatus::Rejected(RejectReason::TooFast);
        }
        let shape_ok = match (&response.answer, task.kind) {
            (Answer::Abstain, _) => true,
            (Answer::Option(i), TaskKind::MultipleChoice) => *i < task.options.len(),
            (Answer::Text(t), TaskKind::FreeText) => single_word(t).is_some(),
            _ => false,
        };
        if !shape_ok {
            return ResponseStatus::Rejected(RejectReason::InvalidAnswer);
        }
        record.answered.insert(response.task_id.clone());
        if record.answered.len() == record.survey.tasks.len() {
            record.survey.completed = true;
        }
        ResponseStatus::Accepted
    }

    pub fn shown(&self) -> usize {
        self.surveys.len()
    }

    pub fn completed(&self) -> usize {
        self.surveys.values().filter(|r| r.survey.completed).count()
    }

    pub fn completion_rate(&self) -> Option<f64> {
        (self.shown() > 0).then(|| self.completed() as f64 / self.shown() as f64)
    }
}

/// Completed over shown surveys in `log`; `None` when nothing was shown.
/// A survey is complete once every task has an accepted response, abstentions
/// included.
pub fn completion_rate(log: &EventLog) -> Option<f64> {
    let mut pending: HashMap<&str, (&str, bool)> = HashMap::new();
    let mut remaining: HashMap<&str, usize> = HashMap::new();
    for e in log.iter() {
        match &e.body {
            EventBody::SurveyShown(s) => {
                remaining.insert(&s.survey_id, s.tasks.len());
                for t in &s.tasks {
                    pending.insert(&t.task_id, (&s.survey_id, true));
                }
            }
            EventBody::AuthorResponse(r) if r.status.is_accepted() => {
                if let Some((sid, open)) = pending.get_mut(r.task_id.as_str()) {
                    if *open {
                        *open = false;
                        *remaining.get_mut(sid).expect("registered survey") -= 1;
                    }
                }
            }
            _ => {}
        }
    }
    let shown = remaining.len();
    (shown > 0).then(|| remaining.values().filter(|n| **n == 0).count() as f64 / shown as f64)
}
