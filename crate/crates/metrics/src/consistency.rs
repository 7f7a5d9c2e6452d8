//! Internal-consistency experiment: predict an author's answer to one task
//! from five other tasks by the same user, labeled by a chosen source.

use std::collections::{BTreeMap, BTreeSet};

use echo_core::rng::StreamRng;
use echo_core::text::tokenize;
use echo_core::RngSeed;
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::error::{MetricsError, Result};
use crate::records::{AnnotationRecord, OPTION_COUNT};
use crate::vote::majority;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum LabelSource {
    Author,
    Annotators(String),
    Random,
}

impl LabelSource {
    pub fn name(&self) -> &str {
        match self {
            LabelSource::Author => "author",
            LabelSource::Annotators(s) => s,
            LabelSource::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub message: String,
    pub question: String,
    pub options: Vec<String>,
    pub label: usize,
    pub same_conversation: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub message: &'a str,
    pub question: &'a str,
    pub options: &'a [String],
    pub examples: &'a [Example],
}

/// Anything that picks one of the four options. External models plug in
/// here; `rng` is a per-query stream for tie-breaking or sampling.
pub trait Predictor {
    fn name(&self) -> &str;
    fn predict(&self, query: &Query<'_>, rng: &mut StreamRng) -> usize;
}

pub struct RandomPredictor;

impl Predictor for RandomPredictor {
    fn name(&self) -> &str {
        "random"
    }

    fn predict(&self, query: &Query<'_>, rng: &mut StreamRng) -> usize {
        rng.gen_range(0..query.options.len())
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "the", "of", "to", "for", "with", "about", "it", "is", "i", "m", "my", "bit", "in",
    "on", "just", "not", "so", "be", "am",
];

fn content_tokens(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / a.union(b).count() as f64
}

/// Posterior heuristic: a prior over options built from how much each option
/// resembles the answers chosen in the examples, times a likelihood from the
/// words the option shares with the message.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicPredictor {
    /// Log-likelihood bonus per content word shared with the message.
    pub message_weight: f64,
    pub example_weight: f64,
    /// Extra weight for examples from the same conversation.
    pub same_conversation_weight: f64,
    /// Pseudo-count added to every option's prior.
    pub smoothing: f64,
}

impl Default for HeuristicPredictor {
    fn default() -> Self {
        HeuristicPredictor {
            message_weight: 3.0,
            example_weight: 1.0,
            same_conversation_weight: 2.0,
            smoothing: 1.0,
        }
    }
}

impl HeuristicPredictor {
    pub fn scores(&self, query: &Query<'_>) -> Vec<f64> {
        let msg = content_tokens(query.message);
        let chosen: Vec<(BTreeSet<String>, f64)> = query
            .examples
            .iter()
            .filter_map(|e| {
                let text = e.options.get(e.label)?;
                let w = self.example_weight + if e.same_conversation { self.same_conversation_weight } else { 0.0 };
                Some((content_tokens(text), w))
            })
            .collect();
        query
            .options
            .iter()
            .map(|o| {
                let toks = content_tokens(o);
                let prior = self.smoothing + chosen.iter().map(|(c, w)| w * jaccard(&toks, c)).sum::<f64>();
                let shared = toks.intersection(&msg).count() as f64;
                prior.ln() + self.message_weight * shared
            })
            .collect()
    }
}

impl Predictor for HeuristicPredictor {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn predict(&self, query: &Query<'_>, rng: &mut StreamRng) -> usize {
        let scores = self.scores(query);
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..scores.len()).filter(|&i| best - scores[i] < 1e-12).collect();
        tied[rng.gen_range(0..tied.len())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyConfig {
    pub example_count: usize,
    pub runs: usize,
    pub seed: RngSeed,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            example_count: 5,
            runs: 3,
            seed: RngSeed(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Bucket {
    pub n: usize,
    pub hits: usize,
}

impl Bucket {
    pub fn accuracy(&self) -> Option<f64> {
        (self.n > 0).then(|| self.hits as f64 / self.n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub label_source: String,
    pub predictor: String,
    pub run_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Pooled over runs, keyed by the number of examples from the same
    /// conversation as the evaluated task.
    pub by_in_conversation: Vec<Bucket>,
    pub evaluated: usize,
    pub skipped: usize,
}

impl ConsistencyReport {
    /// Accuracy with at least half the examples from the same conversation
    /// minus accuracy with fewer.
    pub fn in_conversation_gain(&self) -> Option<f64> {
        let k = self.by_in_conversation.len().saturating_sub(1);
        let split = k.div_ceil(2);
        let sum = |r: std::ops::Range<usize>| {
            self.by_in_conversation[r].iter().fold(Bucket::default(), |a, b| Bucket {
                n: a.n + b.n,
                hits: a.hits + b.hits,
            })
        };
        let low = sum(0..split).accuracy()?;
        let high = sum(split..k + 1).accuracy()?;
        Some(high - low)
    }
}

fn example_label(
    rec: &AnnotationRecord,
    source: &LabelSource,
    seed: RngSeed,
    rng: &mut StreamRng,
) -> Result<usize> {
    Ok(match source {
        LabelSource::Author => rec.author_label,
        LabelSource::Annotators(s) => majority(rec.labels(s)?, seed, s, rec.id()),
        LabelSource::Random => rng.gen_range(0..OPTION_COUNT),
    })
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs the experiment. The example sample and the predictor's stream for a
/// record depend only on (seed, run, record), so different label sources are
/// compared on identical example sets.
pub fn consistency_experiment(
    records: &[AnnotationRecord],
    source: &LabelSource,
    predictor: &dyn Predictor,
    config: &ConsistencyConfig,
) -> Result<ConsistencyReport> {
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_user.entry(r.user_id()).or_default().push(i);
    }
    let k = config.example_count;
    let mut buckets = vec![Bucket::default(); k + 1];
    let mut run_accuracies = Vec::with_capacity(config.runs);
    let mut evaluated = 0;
    let mut skipped = 0;
    for run in 0..config.runs as u64 {
        let mut hits = 0usize;
        let mut n = 0usize;
        for r in records {
            let others: Vec<usize> = by_user[r.user_id()]
                .iter()
                .copied()
                .filter(|&j| records[j].id() != r.id())
                .collect();
            if others.len() < k {
                if run == 0 {
                    skipped += 1;
                }
                continue;
            }
            let mut pick_rng = config.seed.substream(&format!("consistency/examples/{}", r.id()), run);
            let mut label_rng = config.seed.substream(&format!("consistency/random/{}", r.id()), run);
            let mut picked: Vec<usize> = sample(&mut pick_rng, others.len(), k).into_iter().map(|i| others[i]).collect();
            picked.sort_unstable();
            let examples = picked
                .iter()
                .map(|&j| {
                    let e = &records[j];
                    Ok(Example {
                        message: e.conversation.text.clone(),
                        question: e.task.question.clone(),
                        options: e.task.options.clone(),
                        label: example_label(e, source, config.seed, &mut label_rng)?,
                        same_conversation: e.conversation.conversation_id == r.conversation.conversation_id,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let query = Query {
                message: &r.conversation.text,
                question: &r.task.question,
                options: &r.task.options,
                examples: &examples,
            };
            let mut pred_rng = config.seed.substream(&format!("consistency/predict/{}", r.id()), run);
            let guess = predictor.predict(&query, &mut pred_rng);
            let hit = guess == r.author_label;
            let in_conv = examples.iter().filter(|e| e.same_conversation).count();
            buckets[in_conv].n += 1;
            n += 1;
            if hit {
                hits += 1;
                buckets[in_conv].hits += 1;
            }
        }
        if run == 0 {
            evaluated = n;
        }
        if n > 0 {
            run_accuracies.push(hits as f64 / n as f64);
        }
    }
    if run_accuracies.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mean, std) = mean_std(&run_accuracies);
    Ok(ConsistencyReport {
        label_source: source.name().to_string(),
        predictor: predictor.name().to_string(),
        run_accuracies,
        mean,
        std,
        by_in_conversation: buckets,
        evaluated,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{ConversationRef, TaskRef};

    fn rec(id: &str, user: &str, conv: &str, question: &str, author: usize) -> AnnotationRecord {
        AnnotationRecord {
            task: TaskRef {
                task_id: id.into(),
                question: question.into(),
                options: vec![
                    "Excited and motivated".into(),
                    "Calm and relaxed".into(),
                    "Worried and uneasy".into(),
                    "Annoyed and frustrated".into(),
                ],
            },
            conversation: ConversationRef {
                conversation_id: conv.into(),
                user_id: user.into(),
                text: "tell me more about it".into(),
            },
            author_label: author,
            sources: [("llm".to_string(), vec![author, author, (author + 1) % 4])].into_iter().collect(),
        }
    }

    /// Copies the author label of an example asking the identical question.
    struct DuplicateOracle;

    impl Predictor for DuplicateOracle {
        fn name(&self) -> &str {
            "oracle"
        }

        fn predict(&self, q: &Query<'_>, _: &mut StreamRng) -> usize {
            q.examples.iter().find(|e| e.question == q.question).map(|e| e.label).unwrap_or(0)
        }
    }

    fn users(n: usize, rng_seed: u64) -> Vec<AnnotationRecord> {
        let mut rng = RngSeed(rng_seed).substream("fixture", 0);
        let mut out = Vec::new();
        for u in 0..n {
            for t in 0..6 {
                let conv = format!("u{u}-c{}", t / 3);
                out.push(rec(&format!("u{u}-t{t}"), &format!("u{u}"), &conv, &format!("q{t}"), rng.gen_range(0..4)));
            }
        }
        out
    }

    #[test]
    fn duplicate_question_oracle_is_perfect() {
        let mut recs = Vec::new();
        for u in 0..50 {
            let label = u % 4;
            // every task of a user asks the same question with the same answer
            for t in 0..6 {
                recs.push(rec(&format!("u{u}-t{t}"), &format!("u{u}"), "c", "same", label));
            }
        }
        let r = consistency_experiment(&recs, &LabelSource::Author, &DuplicateOracle, &ConsistencyConfig::default())
            .unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.evaluated, 300);
        assert_eq!(r.run_accuracies.len(), 3);
    }

    #[test]
    fn random_predictor_is_at_chance() {
        let recs = users(1000, 1);
        let r = consistency_experiment(&recs, &LabelSource::Author, &RandomPredictor, &ConsistencyConfig::default())
            .unwrap();
        assert!((r.mean - 0.25).abs() < 0.02, "{r:?}");
    }

    #[test]
    fn short_histories_are_skipped() {
        let mut recs = users(3, 2);
        recs.truncate(16); // last user keeps 4 tasks
        let r = consistency_experiment(&recs, &LabelSource::Author, &RandomPredictor, &ConsistencyConfig::default())
            .unwrap();
        assert_eq!(r.skipped, 4);
        assert_eq!(r.evaluated, 12);
        let n: usize = r.by_in_conversation.iter().map(|b| b.n).sum();
        assert_eq!(n, 36);
    }

    #[test]
    fn sources_share_example_sets() {
        let recs = users(20, 3);
        let cfg = ConsistencyConfig::default();
        let a = consistency_experiment(&recs, &LabelSource::Author, &RandomPredictor, &cfg).unwrap();
        let b = consistency_experiment(&recs, &LabelSource::Annotators("llm".into()), &RandomPredictor, &cfg).unwrap();
        // a label-blind predictor cannot tell the sources apart
        assert_eq!(a.run_accuracies, b.run_accuracies);
        assert_eq!(a.by_in_conversation, b.by_in_conversation);
    }

    #[test]
    fn heuristic_prefers_options_resembling_prior_answers() {
        let opts: Vec<String> = vec![
            "Excited and motivated".into(),
            "Calm and relaxed".into(),
            "Worried and uneasy".into(),
            "Annoyed and frustrated".into(),
        ];
        let ex = |label, same| Example {
            message: "m".into(),
            question: "q".into(),
            options: vec!["Feeling excited".into(), "Relaxed".into(), "Uneasy".into(), "Frustrated".into()],
            label,
            same_conversation: same,
        };
        let examples = vec![ex(2, false), ex(2, false), ex(3, true)];
        let q = Query {
            message: "what should I pack",
            question: "How do you feel?",
            options: &opts,
            examples: &examples,
        };
        let h = HeuristicPredictor::default();
        let s = h.scores(&q);
        // two distant votes for "uneasy" (weight 1 each, overlap 1/2) versus one
        // same-conversation vote for "frustrated" (weight 3, overlap 1/2)
        assert!(s[3] > s[2] && s[2] > s[0], "{s:?}");
        assert_eq!(s[0], s[1]);
        let mut rng = RngSeed(0).substream("t", 0);
        assert_eq!(h.predict(&q, &mut rng), 3);

        // a message word outweighs a weak prior
        let q2 = Query { message: "I'm so excited about this trip", ..q };
        assert_eq!(h.predict(&q2, &mut rng), 0);
    }

    #[test]
    fn gain_splits_buckets_at_half() {
        let r = ConsistencyReport {
            label_source: "x".into(),
            predictor: "p".into(),
            run_accuracies: vec![0.5],
            mean: 0.5,
            std: 0.0,
            by_in_conversation: vec![
                Bucket { n: 10, hits: 2 },
                Bucket { n: 10, hits: 3 },
                Bucket { n: 0, hits: 0 },
                Bucket { n: 10, hits: 6 },
                Bucket { n: 10, hits: 8 },
                Bucket { n: 0, hits: 0 },
            ],
            evaluated: 40,
            skipped: 0,
        };
        assert!((r.in_conversation_gain().unwrap() - (14.0 / 20.0 - 5.0 / 20.0)).abs() < 1e-12);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
