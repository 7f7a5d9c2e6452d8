//! Synthetic annotation records: authors answer four-option sentiment tasks
//! about their own conversations, and third-party annotators label the same
//! tasks from the conversation text alone.

use std::collections::BTreeMap;

use echo_core::rng::StreamRng;
use echo_core::RngSeed;
use echo_metrics::records::{AnnotationRecord, ConversationRef, TaskRef, OPTION_COUNT};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::message::pick_weighted;

const STANCES: [[&str; 3]; OPTION_COUNT] = [
    ["excited", "thrilled", "eager"],
    ["calm", "relaxed", "peaceful"],
    ["worried", "nervous", "uneasy"],
    ["frustrated", "annoyed", "irritated"],
];

const TOPICS: &[&str] = &[
    "the camping trip",
    "moving apartments",
    "the job interview",
    "learning guitar",
    "the family reunion",
    "a new laptop",
    "training for a marathon",
    "the wedding plans",
    "switching careers",
    "the garden project",
    "the road trip",
    "adopting a dog",
];

const CHATTER: &[&str] = &[
    "can you help me plan",
    "what should i know about",
    "give me some ideas for",
    "i keep thinking about",
    "tell me what to pack for",
    "help me make a list for",
];

/// One third-party annotator pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    pub source_id: String,
    pub annotators: usize,
    /// Chance of following a sentiment word in the text when one is present.
    pub cue_reliability: f64,
    /// Option weights used when not following a cue, stance order.
    pub bias: [f64; OPTION_COUNT],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationScenario {
    pub seed: u64,
    pub users: usize,
    pub tasks_per_user: usize,
    pub max_conversations_per_user: usize,
    /// Chance that a conversation's stance is the user's dominant one.
    pub conversation_keeps_stance: f64,
    /// Chance that a task's true stance is its conversation's.
    pub task_keeps_stance: f64,
    /// Chance that the conversation text contains a word for its stance.
    pub text_cue_prob: f64,
    pub author_noise: f64,
    pub sources: Vec<SourceProfile>,
}

impl Default for AnnotationScenario {
    fn default() -> Self {
        let src = |id: &str, r: f64, bias: [f64; 4]| SourceProfile {
            source_id: id.to_string(),
            annotators: 3,
            cue_reliability: r,
            bias,
        };
        AnnotationScenario {
            seed: 7,
            users: 400,
            tasks_per_user: 6,
            max_conversations_per_user: 3,
            conversation_keeps_stance: 0.8,
            task_keeps_stance: 0.85,
            text_cue_prob: 0.4,
            author_noise: 0.1,
            sources: vec![
                src("llm", 0.95, [0.2, 0.5, 0.2, 0.1]),
                src("mturk", 0.6, [0.25, 0.25, 0.25, 0.25]),
                src("expert", 0.85, [0.25, 0.35, 0.25, 0.15]),
            ],
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn option_text(stance: usize, rng: &mut StreamRng) -> String {
    let mut words = STANCES[stance].to_vec();
    words.shuffle(rng);
    format!("{} and {}", capitalize(words[0]), words[1])
}

fn other_stance(s: usize, rng: &mut StreamRng) -> usize {
    let mut o = rng.gen_range(0..OPTION_COUNT - 1);
    if o >= s {
        o += 1;
    }
    o
}

/// Generates `users × tasks_per_user` records.
pub fn generate_records(scn: &AnnotationScenario) -> Vec<AnnotationRecord> {
    let seed = RngSeed(scn.seed);
    let mut out = Vec::with_capacity(scn.users * scn.tasks_per_user);
    for u in 0..scn.users {
        let mut rng = seed.substream("annotation/user", u as u64);
        let user_id = format!("user-{u:04}");
        let dominant = rng.gen_range(0..OPTION_COUNT);
        let n_conv = rng.gen_range(1..=scn.max_conversations_per_user.max(1));
        let conversations: Vec<(String, usize, String)> = (0..n_conv)
            .map(|c| {
                let stance = if rng.gen_bool(scn.conversation_keeps_stance) {
                    dominant
                } else {
                    other_stance(dominant, &mut rng)
                };
                let topic = TOPICS.choose(&mut rng).expect("topics");
                let chatter = CHATTER.choose(&mut rng).expect("chatter");
                let text = if rng.gen_bool(scn.text_cue_prob) {
                    let cue = STANCES[stance].choose(&mut rng).expect("stance words");
                    format!("{chatter} {topic}, i am {cue} about it")
                } else {
                    format!("{chatter} {topic}")
                };
                (format!("{user_id}-c{c}"), stance, text)
            })
            .collect();
        for t in 0..scn.tasks_per_user {
            let (conversation_id, conv_stance, text) = &conversations[if t < n_conv { t } else { rng.gen_range(0..n_conv) }];
            let truth = if rng.gen_bool(scn.task_keeps_stance) {
                *conv_stance
            } else {
                rng.gen_range(0..OPTION_COUNT)
            };
            let mut order: Vec<usize> = (0..OPTION_COUNT).collect();
            order.shuffle(&mut rng);
            let options: Vec<String> = order.iter().map(|&s| option_text(s, &mut rng)).collect();
            let position = |stance: usize| order.iter().position(|&s| s == stance).expect("every stance offered");
            let answered = if rng.gen_bool(scn.author_noise) {
                other_stance(truth, &mut rng)
            } else {
                truth
            };
            let topic = TOPICS.choose(&mut rng).expect("topics");
            let cue = STANCES
                .iter()
                .position(|ws| ws.iter().any(|w| text.split([' ', ',']).any(|t| t == *w)));
            let mut sources = BTreeMap::new();
            for src in &scn.sources {
                let labels = (0..src.annotators)
                    .map(|_| {
                        let stance = match cue {
                            Some(c) if rng.gen_bool(src.cue_reliability) => c,
                            _ => pick_weighted(&src.bias, &mut rng),
                        };
                        position(stance)
                    })
                    .collect();
                sources.insert(src.source_id.clone(), labels);
            }
            out.push(AnnotationRecord {
                task: TaskRef {
                    task_id: format!("{user_id}-t{t}"),
                    question: format!("How do you feel about {topic}?"),
                    options,
                },
                conversation: ConversationRef {
                    conversation_id: conversation_id.clone(),
                    user_id: user_id.clone(),
                    text: text.clone(),
                },
                author_label: position(answered),
                sources,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_valid_and_deterministic() {
        let scn = AnnotationScenario {
            users: 30,
            ..AnnotationScenario::default()
        };
        let a = generate_records(&scn);
        assert_eq!(a.len(), 180);
        for r in &a {
            r.validate().unwrap();
            assert_eq!(r.sources.len(), 3);
            assert!(r.sources.values().all(|v| v.len() == 3));
        }
        assert_eq!(a, generate_records(&scn));
    }

    #[test]
    fn noiseless_author_picks_the_conversation_stance() {
        let scn = AnnotationScenario {
            users: 50,
            task_keeps_stance: 1.0,
            author_noise: 0.0,
            text_cue_prob: 1.0,
            ..AnnotationScenario::default()
        };
        for r in generate_records(&scn) {
            let chosen = r.task.options[r.author_label].to_lowercase();
            let words: Vec<&str> = r.conversation.text.split([' ', ',']).collect();
            let stance = STANCES.iter().find(|ws| ws.iter().any(|w| words.contains(w))).unwrap();
            assert!(stance.iter().any(|w| chosen.contains(w)), "{r:?}");
        }
    }
}
