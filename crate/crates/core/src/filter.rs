//! Taskability filter: spam/greeting rejection, per-feature relevance gating
//! and the enough-features threshold.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::scalar::{sigmoid, Scalar};
use crate::text::{tokenize, SparseVec};
use crate::types::{FeatureRegistry, FeatureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    Spam,
    Greeting,
    TooShort,
    RateLimited,
    TooFewFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub greeting_lexicon: Vec<String>,
    pub min_tokens: usize,
    pub dedup_history: usize,
    pub gate_threshold: f64,
    /// Features that must be relevant before a survey is worth showing.
    pub question_count: usize,
    /// User messages required in a session between two surveys.
    pub rate_limit_messages: usize,
    pub rapid_window_ms: u64,
    pub ban_rapid_count: u64,
    pub ban_reward_score: f64,
    pub ban_min_messages: u64,
    pub untrusted_users: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            greeting_lexicon: [
                "hi", "hello", "hey", "hiya", "howdy", "yo", "sup", "greetings", "thanks",
                "thank you", "thx", "ok", "okay", "bye", "goodbye", "good morning",
                "good afternoon", "good evening", "good night", "how are you", "there",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            min_tokens: 3,
            dedup_history: 10,
            gate_threshold: 0.5,
            question_count: 4,
            rate_limit_messages: 5,
            rapid_window_ms: 2_000,
            ban_rapid_count: 20,
            ban_reward_score: 0.5,
            ban_min_messages: 10,
            untrusted_users: Vec::new(),
        }
    }
}

/// Per-feature linear gate over the featurized message.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelevanceGate<T> {
    pub weights: BTreeMap<u32, T>,
    pub bias: T,
}

impl<T: Scalar> RelevanceGate<T> {
    pub fn new() -> Self {
        RelevanceGate {
            weights: BTreeMap::new(),
            bias: T::zero(),
        }
    }

    pub fn output(&self, x: &SparseVec<T>) -> T {
        let z = x.iter().fold(self.bias, |acc, (i, v)| {
            acc + self.weights.get(&i).copied().unwrap_or(T::zero()) * v
        });
        sigmoid(z)
    }

    /// One logistic-regression SGD step toward `relevant`.
    pub fn train_step(&mut self, x: &SparseVec<T>, relevant: bool, lr: T) {
        let target = if relevant { T::one() } else { T::zero() };
        let g = self.output(x) - target;
        for (i, v) in x.iter() {
            *self.weights.entry(i).or_insert(T::zero()) -= lr * g * v;
        }
        self.bias -= lr * g;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relevance<T> {
    pub relevant: bool,
    pub score: T,
    pub keyword_hits: usize,
}

/// Keyword overlap plus the linear gate.
///
/// `score = ½·[any keyword present] + ½·gate(x)`; the feature is relevant
/// when `score ≥ threshold`. An untrained gate outputs exactly ½, so with the
/// default threshold a message is relevant iff it mentions a keyword, and the
/// gate orders relevant features among themselves.
pub fn feature_relevance<T: Scalar>(
    tokens: &[String],
    x: &SparseVec<T>,
    spec: &FeatureSpec,
    gate: &RelevanceGate<T>,
    threshold: f64,
) -> Relevance<T> {
    let keyword_hits = tokens
        .iter()
        .filter(|t| spec.relevance_keywords.iter().any(|k| k.eq_ignore_ascii_case(t)))
        .count();
    let half = T::of(0.5);
    let kw = if keyword_hits > 0 { T::one() } else { T::zero() };
    let score = half * kw + half * gate.output(x);
    Relevance {
        relevant: score >= T::of(threshold),
        score,
        keyword_hits,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FraudFlags {
    pub user_id: String,
    pub rapid_message_count: u64,
    pub reward_seeking_score: f64,
    pub banned: bool,
}

#[derive(Debug, Clone, Default)]
struct UserState {
    recent: VecDeque<String>,
    last_ts: Option<u64>,
    rapid: u64,
    spam_hits: u64,
    total: u64,
    banned: bool,
}

#[derive(Debug, Clone, Default)]
struct SessionState {
    messages_since_survey: Option<usize>,
}

/// Taskability outcome for one user message.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskabilityDecision<T> {
    pub is_taskable: bool,
    /// Relevant feature ids in registry order.
    pub relevant_features: Vec<String>,
    /// Relevance score for every registered feature, registry order.
    pub scores: Vec<T>,
    pub rejection_reason: Option<RejectionReason>,
}

impl<T> TaskabilityDecision<T> {
    pub fn rejected(reason: RejectionReason) -> Self {
        TaskabilityDecision {
            is_taskable: false,
            relevant_features: Vec::new(),
            scores: Vec::new(),
            rejection_reason: Some(reason),
        }
    }
}

/// Stateful filter; holds per-user spam history and per-session survey spacing.
#[derive(Debug, Clone)]
pub struct TaskFilter<T> {
    pub config: FilterConfig,
    gates: Vec<RelevanceGate<T>>,
    users: HashMap<String, UserState>,
    sessions: HashMap<String, SessionState>,
    greeting_words: HashSet<String>,
}

fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

impl<T: Scalar> TaskFilter<T> {
    pub fn new(config: FilterConfig, feature_count: usize) -> Self {
        let greeting_words = config
            .greeting_lexicon
            .iter()
            .flat_map(|g| tokenize(g))
            .collect();
        TaskFilter {
            config,
            gates: vec![RelevanceGate::new(); feature_count],
            users: HashMap::new(),
            sessions: HashMap::new(),
            greeting_words,
        }
    }

    pub fn gates(&self) -> &[RelevanceGate<T>] {
        &self.gates
    }

    pub fn gates_mut(&mut self) -> &mut [RelevanceGate<T>] {
        &mut self.gates
    }

    /// Spam/greeting check; records the message in the user's history.
    pub fn check_spam_greeting(
        &mut self,
        user_id: &str,
        text: &str,
        timestamp_ms: u64,
    ) -> Result<(), RejectionReason> {
        let norm = normalize(text);
        let tokens: Vec<&str> = norm.split(' ').filter(|t| !t.is_empty()).collect();
        let lexicon_hit = self.config.greeting_lexicon.iter().any(|g| normalize(g) == norm)
            || (!tokens.is_empty() && tokens.iter().all(|t| self.greeting_words.contains(*t)));

        let history = self.config.dedup_history;
        let user = self.users.entry(user_id.to_string()).or_default();
        user.total += 1;
        if let Some(prev) = user.last_ts {
            if timestamp_ms.saturating_sub(prev) < self.config.rapid_window_ms {
                user.rapid += 1;
            }
        }
        user.last_ts = Some(timestamp_ms);

        let verdict = if lexicon_hit {
            Err(RejectionReason::Greeting)
        } else if tokens.len() < self.config.min_tokens {
            Err(RejectionReason::TooShort)
        } else if user.recent.iter().any(|m| *m == norm) {
            user.spam_hits += 1;
            Err(RejectionReason::Spam)
        } else {
            Ok(())
        };
        user.recent.push_back(norm);
        while user.recent.len() > history {
            user.recent.pop_front();
        }
        let score = user.spam_hits as f64 / user.total as f64;
        if user.rapid >= self.config.ban_rapid_count
            || (user.total >= self.config.ban_min_messages && score >= self.config.ban_reward_score)
        {
            user.banned = true;
        }
        verdict
    }

    pub fn fraud_flags(&self, user_id: &str) -> FraudFlags {
        let user = self.users.get(user_id).cloned().unwrap_or_default();
        FraudFlags {
            user_id: user_id.to_string(),
            rapid_message_count: user.rapid,
            reward_seeking_score: if user.total == 0 {
                0.0
            } else {
                user.spam_hits as f64 / user.total as f64
            },
            banned: self.is_banned(user_id),
        }
    }

    pub fn is_banned(&self, user_id: &str) -> bool {
        self.config.untrusted_users.iter().any(|u| u == user_id)
            || self.users.get(user_id).is_some_and(|u| u.banned)
    }

    /// Counts a user message toward the session's survey spacing.
    pub fn note_user_message(&mut self, session_id: &str) {
        let s = self.sessions.entry(session_id.to_string()).or_default();
        if let Some(n) = s.messages_since_survey.as_mut() {
            *n += 1;
        }
    }

    pub fn note_survey(&mut self, session_id: &str) {
        self.sessions
            .entry(session_id.to_string())
            .or_default()
            .messages_since_survey = Some(0);
    }

    fn rate_limited(&self, session_id: &str) -> bool {
        self.sessions
            .get(session_id)
            .and_then(|s| s.messages_since_survey)
            .is_some_and(|n| n < self.config.rate_limit_messages)
    }

    /// Relevance of every registered feature to the message.
    pub fn relevance(
        &self,
        registry: &FeatureRegistry,
        tokens: &[String],
        x: &SparseVec<T>,
    ) -> Vec<Relevance<T>> {
        registry
            .specs()
            .iter()
            .zip(&self.gates)
            .map(|(spec, gate)| feature_relevance(tokens, x, spec, gate, self.config.gate_threshold))
            .collect()
    }

    /// Decides whether a message that passed the spam check gets a survey.
    pub fn decide_taskable(
        &self,
        registry: &FeatureRegistry,
        user_id: &str,
        session_id: &str,
        tokens: &[String],
        x: &SparseVec<T>,
    ) -> TaskabilityDecision<T> {
        if self.is_banned(user_id) {
            return TaskabilityDecision::rejected(RejectionReason::Spam);
        }
        let rel = self.relevance(registry, tokens, x);
        let relevant_features: Vec<String> = registry
            .specs()
            .iter()
            .zip(&rel)
            .filter(|(_, r)| r.relevant)
            .map(|(s, _)| s.feature_id.clone())
            .collect();
        let scores = rel.iter().map(|r| r.score).collect();
        let rejection_reason = if relevant_features.len() < self.config.question_count {
            Some(RejectionReason::TooFewFeatures)
        } else if self.rate_limited(session_id) {
            Some(RejectionReason::RateLimited)
        } else {
            None
        };
        TaskabilityDecision {
            is_taskable: rejection_reason.is_none(),
            relevant_features,
            scores,
            rejection_reason,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::featurize;
    use crate::types::FeatureKind;
    use proptest::prelude::*;

    fn spec(id: &str, kw: &[&str]) -> FeatureSpec {
        FeatureSpec {
            feature_id: id.into(),
            name: id.into(),
            kind: FeatureKind::Categorical,
            label_space: vec!["a".into(), "b".into()],
            relevance_keywords: kw.iter().map(|s| s.to_string()).collect(),
            description: String::new(),
            question_template: None,
        }
    }

    fn registry(n: usize) -> FeatureRegistry {
        let specs = (0..n)
            .map(|i| spec(&format!("f{i:02}"), &[&format!("kw{i}")]))
            .collect();
        FeatureRegistry::new(specs).unwrap()
    }

    fn vec(text: &str) -> (Vec<String>, SparseVec<f64>) {
        (tokenize(text), featurize(text, 1024))
    }

    #[test]
    fn greetings_rejected() {
        let mut f = TaskFilter::<f64>::new(FilterConfig::default(), 0);
        assert_eq!(f.check_spam_greeting("u", "hi", 0), Err(RejectionReason::Greeting));
        assert_eq!(f.check_spam_greeting("u", "Hello there!", 10_000), Err(RejectionReason::Greeting));
        assert_eq!(f.check_spam_greeting("u", "How to make a blanket?", 20_000), Ok(()));
    }

    #[test]
    fn short_and_duplicate_messages_rejected() {
        let mut f = TaskFilter::<f64>::new(FilterConfig::default(), 0);
        assert_eq!(f.check_spam_greeting("u", "blanket pattern", 0), Err(RejectionReason::TooShort));
        assert_eq!(f.check_spam_greeting("u", "best tent for rain", 10_000), Ok(()));
        assert_eq!(
            f.check_spam_greeting("u", "Best tent, for rain", 20_000),
            Err(RejectionReason::Spam)
        );
        // another user's history is separate
        assert_eq!(f.check_spam_greeting("v", "best tent for rain", 30_000), Ok(()));
    }

    #[test]
    fn duplicate_window_is_last_ten_messages() {
        let mut f = TaskFilter::<f64>::new(FilterConfig::default(), 0);
        f.check_spam_greeting("u", "first distinct message here", 0).unwrap();
        for i in 0..10 {
            f.check_spam_greeting("u", &format!("filler message number {i}"), (i + 1) * 10_000)
                .unwrap();
        }
        assert_eq!(f.check_spam_greeting("u", "first distinct message here", 200_000), Ok(()));
    }

    #[test]
    fn keyword_hit_is_relevant_and_zero_gate_without_keyword_is_not() {
        let s = spec("budget", &["price"]);
        let gate = RelevanceGate::<f64>::new();
        let (t, x) = vec("what is the price of this");
        let r = feature_relevance(&t, &x, &s, &gate, 0.5);
        assert!(r.relevant);
        assert_eq!(r.score, 0.75);
        let (t, x) = vec("what is this thing");
        let r = feature_relevance(&t, &x, &s, &gate, 0.5);
        assert_eq!(r.score, 0.25);
        assert!(!r.relevant);
    }

    #[test]
    fn trained_gate_tracks_its_generating_rule() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let words = ["tent", "stove", "lamp", "rope", "map", "boots", "hat", "knife"];
        let s = spec("camp", &["camping"]);
        let mut corpus = Vec::new();
        for _ in 0..50 {
            let relevant = rng.gen_bool(0.5);
            let mut text: Vec<&str> = (0..4).map(|_| words[rng.gen_range(0..words.len())]).collect();
            if relevant {
                text.insert(rng.gen_range(0..text.len()), "camping");
            }
            corpus.push((text.join(" "), relevant));
        }
        let mut gate = RelevanceGate::<f64>::new();
        for _ in 0..20 {
            for (text, rel) in &corpus {
                gate.train_step(&featurize(text, 1024), *rel, 0.5);
            }
        }
        let correct = corpus
            .iter()
            .filter(|(text, rel)| {
                let (t, x) = vec(text);
                feature_relevance(&t, &x, &s, &gate, 0.5).relevant == *rel
            })
            .count();
        assert!(correct as f64 / 50.0 >= 0.9, "accuracy {}", correct as f64 / 50.0);
        // the trained gate alone also separates the corpus
        let gate_correct = corpus
            .iter()
            .filter(|(text, rel)| (gate.output(&featurize(text, 1024)) >= 0.5) == *rel)
            .count();
        assert!(gate_correct as f64 / 50.0 >= 0.9);
    }

    #[test]
    fn four_relevant_features_is_taskable_three_is_not() {
        let reg = registry(6);
        let f = TaskFilter::<f64>::new(FilterConfig::default(), reg.len());
        let (t, x) = vec("kw0 kw1 kw2 kw3 please");
        let d = f.decide_taskable(&reg, "u", "s", &t, &x);
        assert!(d.is_taskable);
        assert_eq!(d.relevant_features, vec!["f00", "f01", "f02", "f03"]);
        assert_eq!(d.rejection_reason, None);
        let (t, x) = vec("kw0 kw1 kw2 please");
        let d = f.decide_taskable(&reg, "u", "s", &t, &x);
        assert!(!d.is_taskable);
        assert_eq!(d.rejection_reason, Some(RejectionReason::TooFewFeatures));
    }

    #[test]
    fn survey_spacing_rate_limits() {
        let reg = registry(4);
        let mut f = TaskFilter::<f64>::new(FilterConfig::default(), reg.len());
        let (t, x) = vec("kw0 kw1 kw2 kw3");
        f.note_user_message("s");
        assert!(f.decide_taskable(&reg, "u", "s", &t, &x).is_taskable);
        f.note_survey("s");
        f.note_user_message("s");
        let d = f.decide_taskable(&reg, "u", "s", &t, &x);
        assert_eq!(d.rejection_reason, Some(RejectionReason::RateLimited));
        for _ in 0..4 {
            f.note_user_message("s");
        }
        assert!(f.decide_taskable(&reg, "u", "s", &t, &x).is_taskable);
        // other sessions are unaffected
        assert!(f.decide_taskable(&reg, "u", "other", &t, &x).is_taskable);
    }

    #[test]
    fn banned_users_get_spam_rejection() {
        let reg = registry(4);
        let mut cfg = FilterConfig::default();
        cfg.untrusted_users = vec!["mallory".into()];
        let mut f = TaskFilter::<f64>::new(cfg, reg.len());
        let (t, x) = vec("kw0 kw1 kw2 kw3");
        let d = f.decide_taskable(&reg, "mallory", "s", &t, &x);
        assert_eq!(d.rejection_reason, Some(RejectionReason::Spam));

        // repeated duplicates trip the reward-seeking ban
        for i in 0..12 {
            let _ = f.check_spam_greeting("eve", "give me the task now", i * 10_000);
        }
        assert!(f.fraud_flags("eve").banned);
        assert!(f.fraud_flags("eve").reward_seeking_score >= 0.5);
        assert!(!f.decide_taskable(&reg, "eve", "s2", &t, &x).is_taskable);
    }

    proptest! {
        #[test]
        fn adding_keyword_never_unsets_relevance(
            words in proptest::collection::vec("[a-z]{2,7}", 1..8),
            pos in 0usize..8,
            seed in 0u64..50,
        ) {
            use rand::{Rng, SeedableRng};
            let s = spec("f", &["gadget"]);
            let mut gate = RelevanceGate::<f64>::new();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for i in 0..1024u32 {
                gate.weights.insert(i, rng.gen_range(-3.0..3.0));
            }
            gate.bias = rng.gen_range(-1.0..1.0);
            let text = words.join(" ");
            let (t, x) = vec(&text);
            let before = feature_relevance(&t, &x, &s, &gate, 0.5).relevant;
            let mut more = words.clone();
            more.insert(pos.min(more.len()), "gadget".into());
            let text2 = more.join(" ");
            let (t2, x2) = vec(&text2);
            let after = feature_relevance(&t2, &x2, &s, &gate, 0.5).relevant;
            prop_assert!(!before || after);
        }
    }
}
