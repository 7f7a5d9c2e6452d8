//! Synthetic chat messages built from the world vocabulary.

use echo_core::rng::StreamRng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::author::SimAuthor;
use crate::world::World;

const GREETINGS: &[&str] = &["hi", "hello there", "hey", "thanks", "good morning", "ok"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MessageMix {
    /// Share of messages that are bare greetings.
    pub greeting_prob: f64,
    /// Share of topical messages mentioning fewer features than a survey needs.
    pub sparse_prob: f64,
    pub min_features: usize,
    pub max_features: usize,
    /// Chance that a mentioned feature comes with a cue for the author's value.
    pub cue_prob: f64,
    /// Chance that each attribute feature of the chosen vertical is mentioned.
    pub vertical_attribute_prob: f64,
    pub max_filler: usize,
}

impl Default for MessageMix {
    fn default() -> Self {
        MessageMix {
            greeting_prob: 0.1,
            sparse_prob: 0.15,
            min_features: 4,
            max_features: 6,
            cue_prob: 0.85,
            vertical_attribute_prob: 0.8,
            max_filler: 3,
        }
    }
}

impl MessageMix {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_features == 0 || self.min_features > self.max_features {
            return Err("min_features must be in 1..=max_features".into());
        }
        for (name, p) in [
            ("greeting_prob", self.greeting_prob),
            ("sparse_prob", self.sparse_prob),
            ("cue_prob", self.cue_prob),
            ("vertical_attribute_prob", self.vertical_attribute_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be a probability, got {p}"));
            }
        }
        Ok(())
    }
}

/// Features, with their values, that one message mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct Mention {
    pub feature: usize,
    pub value: usize,
    pub cued: bool,
}

fn render(world: &World, noun: Option<&str>, mentions: &[Mention], mix: &MessageMix, rng: &mut StreamRng) -> String {
    let mut segments: Vec<String> = Vec::new();
    for m in mentions {
        let f = &world.features[m.feature];
        let kw = f.spec.relevance_keywords.choose(rng).expect("keywords");
        if m.cued {
            let cue = f.cues[m.value].choose(rng).expect("cues");
            if rng.gen_bool(0.5) {
                segments.push(format!("{kw} {cue}"));
            } else {
                segments.push(format!("{cue} {kw}"));
            }
        } else {
            segments.push(kw.clone());
        }
    }
    if let Some(n) = noun {
        segments.push(n.to_string());
    }
    for _ in 0..rng.gen_range(1..=mix.max_filler.max(1)) {
        segments.push(world.filler.choose(rng).expect("filler").clone());
    }
    segments.shuffle(rng);
    segments.join(" ")
}

/// One user message from `author`.
pub fn gen_message(world: &World, author: &SimAuthor, mix: &MessageMix, rng: &mut StreamRng) -> String {
    if rng.gen_bool(mix.greeting_prob) {
        return GREETINGS.choose(rng).expect("greetings").to_string();
    }
    let vi = pick_weighted(&author.interests, rng);
    let vertical = &world.verticals[vi];
    let noun = vertical.nouns.choose(rng).expect("nouns");
    let count = if rng.gen_bool(mix.sparse_prob) {
        rng.gen_range(1..mix.min_features.max(2))
    } else {
        rng.gen_range(mix.min_features..=mix.max_features)
    };
    let mut chosen: Vec<usize> = vertical
        .attributes
        .iter()
        .copied()
        .filter(|_| rng.gen_bool(mix.vertical_attribute_prob))
        .collect();
    let mut rest: Vec<usize> = (0..world.features.len()).filter(|i| !chosen.contains(i)).collect();
    rest.shuffle(rng);
    chosen.extend(rest);
    chosen.truncate(count);
    let mentions: Vec<Mention> = chosen
        .into_iter()
        .map(|f| Mention {
            feature: f,
            value: author.latent[f],
            cued: rng.gen_bool(mix.cue_prob),
        })
        .collect();
    render(world, Some(noun), &mentions, mix, rng)
}

/// A held-out probe for one feature: always cues `value` for `feature`, plus
/// three other features with random cued values.
pub fn probe_message(world: &World, feature: usize, value: usize, mix: &MessageMix, rng: &mut StreamRng) -> String {
    let mut others: Vec<usize> = (0..world.features.len()).filter(|&i| i != feature).collect();
    others.shuffle(rng);
    let mut mentions = vec![Mention {
        feature,
        value,
        cued: true,
    }];
    for &f in others.iter().take(3) {
        mentions.push(Mention {
            feature: f,
            value: rng.gen_range(0..world.features[f].values.len()),
            cued: rng.gen_bool(mix.cue_prob),
        });
    }
    let v = world.verticals.choose(rng).expect("verticals");
    let noun = v.nouns.choose(rng).expect("nouns");
    render(world, Some(noun), &mentions, mix, rng)
}

pub fn pick_weighted(weights: &[f64], rng: &mut StreamRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}
