//! The synthetic world: a feature vocabulary whose values users express
//! through indirect cue words, and a catalog whose products are described by
//! the value labels themselves.

use echo_core::recommend::ProductRecord;
use echo_core::types::{FeatureKind, FeatureRegistry, FeatureSpec};
use echo_core::{Result, RngSeed};
use rand::seq::SliceRandom;
use rand::Rng;

/// One feature of the world with the words that signal each of its values.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldFeature {
    pub spec: FeatureSpec,
    /// Latent value labels. Binary features use `["Yes", "No"]`; free-text
    /// features list the words authors may type.
    pub values: Vec<String>,
    /// Cue words per value, parallel to `values`.
    pub cues: Vec<Vec<String>>,
}

impl WorldFeature {
    pub fn id(&self) -> &str {
        &self.spec.feature_id
    }

    pub fn kind(&self) -> FeatureKind {
        self.spec.kind
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertical {
    pub name: String,
    pub nouns: Vec<String>,
    /// Features whose values describe products of this vertical.
    pub attributes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub features: Vec<WorldFeature>,
    pub verticals: Vec<Vertical>,
    pub filler: Vec<String>,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

struct Row {
    id: &'static str,
    kind: FeatureKind,
    keywords: &'static [&'static str],
    values: &'static [&'static str],
    cues: &'static [&'static [&'static str]],
    question: &'static str,
}

const ROWS: &[Row] = &[
    Row {
        id: "budget",
        kind: FeatureKind::Categorical,
        keywords: &["budget", "price", "spend"],
        values: &["thrifty", "midrange", "premium", "luxury"],
        cues: &[&["cheap", "bargain"], &["reasonable", "decent"], &["quality", "durable"], &["fancy", "designer"]],
        question: "What budget do you have in mind for {tokens}?",
    },
    Row {
        id: "experience",
        kind: FeatureKind::Categorical,
        keywords: &["experience", "skills", "level"],
        values: &["novice", "amateur", "seasoned", "expert"],
        cues: &[&["first", "never"], &["casual", "sometimes"], &["often", "years"], &["professional", "competitive"]],
        question: "How experienced are you with {tokens}?",
    },
    Row {
        id: "mood",
        kind: FeatureKind::Categorical,
        keywords: &["feel", "feeling", "mood"],
        values: &["excited", "calm", "anxious", "frustrated"],
        cues: &[&["thrilled", "yay"], &["relaxed", "chill"], &["worried", "nervous"], &["annoyed", "ugh"]],
        question: "How are you feeling about {tokens}?",
    },
    Row {
        id: "urgency",
        kind: FeatureKind::Categorical,
        keywords: &["soon", "timeline", "deadline"],
        values: &["urgent", "shortterm", "planned", "flexible"],
        cues: &[&["asap", "tonight"], &["weekend", "tomorrow"], &["planning", "schedule"], &["eventually", "whenever"]],
        question: "How soon do you need {tokens}?",
    },
    Row {
        id: "recipient",
        kind: FeatureKind::Categorical,
        keywords: &["gift", "present", "buying"],
        values: &["myself", "partner", "child", "friend"],
        cues: &[&["treat", "selfcare"], &["wife", "husband"], &["son", "daughter"], &["buddy", "coworker"]],
        question: "Who is {tokens} for?",
    },
    Row {
        id: "style",
        kind: FeatureKind::Categorical,
        keywords: &["style", "look", "design"],
        values: &["classic", "modern", "sporty", "bohemian"],
        cues: &[&["timeless", "vintage"], &["sleek", "minimalist"], &["athletic", "active"], &["boho", "artsy"]],
        question: "Which style fits {tokens} best?",
    },
    Row {
        id: "climate",
        kind: FeatureKind::Categorical,
        keywords: &["weather", "climate", "season"],
        values: &["tropical", "temperate", "arid", "arctic"],
        cues: &[&["humid", "beach"], &["mild", "spring"], &["desert", "dry"], &["snow", "freezing"]],
        question: "What climate will {tokens} face?",
    },
    Row {
        id: "group",
        kind: FeatureKind::Categorical,
        keywords: &["group", "people", "company"],
        values: &["solo", "couple", "family", "crowd"],
        cues: &[&["alone", "solitary"], &["two", "romantic"], &["kids", "parents"], &["party", "team"]],
        question: "Who will be with you for {tokens}?",
    },
    Row {
        id: "priority",
        kind: FeatureKind::Categorical,
        keywords: &["priority", "important", "matters"],
        values: &["comfort", "performance", "durability", "aesthetics"],
        cues: &[&["cozy", "soft"], &["fast", "powerful"], &["sturdy", "lasting"], &["pretty", "beautiful"]],
        question: "What matters most to you about {tokens}?",
    },
    Row {
        id: "frequency",
        kind: FeatureKind::Categorical,
        keywords: &["use", "usage", "frequency"],
        values: &["daily", "weekly", "occasional", "rare"],
        cues: &[&["everyday", "commute"], &["regularly", "routine"], &["occasionally", "special"], &["once", "rarely"]],
        question: "How often will you use {tokens}?",
    },
    Row {
        id: "eco_friendly",
        kind: FeatureKind::Binary,
        keywords: &["eco", "sustainable", "environment"],
        values: &["Yes", "No"],
        cues: &[&["green", "recycled"], &["disposable", "plastic"]],
        question: "Do you want {tokens} to be eco friendly?",
    },
    Row {
        id: "brand_loyal",
        kind: FeatureKind::Binary,
        keywords: &["brand", "brands", "label"],
        values: &["Yes", "No"],
        cues: &[&["loyal", "trusted"], &["generic", "unbranded"]],
        question: "Do you stick to a favorite brand for {tokens}?",
    },
    Row {
        id: "channel",
        kind: FeatureKind::Categorical,
        keywords: &["shop", "store", "purchase"],
        values: &["online", "instore", "secondhand", "rental"],
        cues: &[&["delivery", "shipping"], &["mall", "browse"], &["used", "thrift"], &["rent", "borrow"]],
        question: "How would you like to get {tokens}?",
    },
    Row {
        id: "size",
        kind: FeatureKind::Categorical,
        keywords: &["size", "fit", "dimensions"],
        values: &["compact", "standard", "large", "oversized"],
        cues: &[&["small", "tiny"], &["normal", "regular"], &["big", "roomy"], &["huge", "massive"]],
        question: "What size are you after for {tokens}?",
    },
    Row {
        id: "hobby",
        kind: FeatureKind::FreeText,
        keywords: &["hobby", "hobbies", "pastime"],
        values: &["hiking", "cooking", "painting", "gaming"],
        cues: &[&["trail", "mountains"], &["recipes", "chef"], &["canvas", "brushes"], &["console", "multiplayer"]],
        question: "In one word, which hobby is {tokens} for?",
    },
    Row {
        id: "occasion",
        kind: FeatureKind::FreeText,
        keywords: &["occasion", "event", "celebrating"],
        values: &["birthday", "wedding", "holiday", "graduation"],
        cues: &[&["cake", "turning"], &["bride", "ceremony"], &["christmas", "vacation"], &["diploma", "commencement"]],
        question: "In one word, what occasion is {tokens} for?",
    },
];

const VERTICALS: &[(&str, &[&str], &[&str])] = &[
    ("outdoor", &["tent", "backpack", "boots"], &["budget", "experience", "climate", "group"]),
    ("kitchen", &["blender", "skillet", "knives"], &["budget", "priority", "frequency", "size"]),
    ("fashion", &["jacket", "sneakers", "dress"], &["budget", "style", "recipient", "channel"]),
    ("travel", &["luggage", "hotel", "flights"], &["budget", "group", "climate", "occasion"]),
    ("tech", &["laptop", "headphones", "camera"], &["budget", "priority", "hobby", "size"]),
];

const FILLER: &[&str] = &[
    "need", "some", "help", "with", "looking", "at", "options", "what", "do", "you", "think", "can", "recommend",
    "any", "please", "good", "ideas", "maybe", "also", "and", "right", "now", "really", "want",
];

impl World {
    pub fn standard() -> World {
        let features: Vec<WorldFeature> = ROWS
            .iter()
            .map(|r| WorldFeature {
                spec: FeatureSpec {
                    feature_id: r.id.to_string(),
                    name: r.id.to_string(),
                    kind: r.kind,
                    label_space: if r.kind == FeatureKind::Categorical { words(r.values) } else { Vec::new() },
                    relevance_keywords: words(r.keywords),
                    description: format!("{} of the request", r.id.replace('_', " ")),
                    question_template: Some(r.question.to_string()),
                },
                values: words(r.values),
                cues: r.cues.iter().map(|c| words(c)).collect(),
            })
            .collect();
        let index = |id: &str| features.iter().position(|f| f.id() == id).expect("vertical attribute is a feature");
        let verticals = VERTICALS
            .iter()
            .map(|(name, nouns, attrs)| Vertical {
                name: name.to_string(),
                nouns: words(nouns),
                attributes: attrs.iter().map(|a| index(a)).collect(),
            })
            .collect();
        World {
            features,
            verticals,
            filler: words(FILLER),
        }
    }

    /// Rejects a world that cannot produce messages.
    pub fn validate(&self) -> std::result::Result<(), crate::error::SimError> {
        let bad = |why: &str| Err(crate::error::SimError::Config(format!("world: {why}")));
        if self.features.is_empty() {
            return bad("no features");
        }
        if self.verticals.is_empty() || self.verticals.iter().any(|v| v.nouns.is_empty()) {
            return bad("every vertical needs at least one noun");
        }
        if self.filler.is_empty() {
            return bad("empty filler bank");
        }
        for f in &self.features {
            if f.spec.relevance_keywords.is_empty() || f.cues.len() != f.values.len() || f.cues.iter().any(|c| c.is_empty()) {
                return bad(&format!("feature `{}` lacks keywords or cues", f.id()));
            }
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<FeatureRegistry> {
        FeatureRegistry::new(self.features.iter().map(|f| f.spec.clone()).collect())
    }

    pub fn feature_index(&self, id: &str) -> Option<usize> {
        self.features.iter().position(|f| f.id() == id)
    }

    /// Text a value contributes to product descriptions and preference
    /// embeddings; `None` for a false binary value.
    pub fn value_text(&self, feature: usize, value: usize) -> Option<String> {
        let f = &self.features[feature];
        match f.kind() {
            FeatureKind::Binary => (value == 0).then(|| f.spec.name.replace('_', " ")),
            _ => Some(f.values[value].clone()),
        }
    }

    /// `per_vertical` products per vertical. Each product takes a random
    /// value for each of its vertical's attribute features.
    pub fn catalog(&self, per_vertical: usize, seed: RngSeed) -> Vec<ProductRecord> {
        let mut rng = seed.substream("catalog", 0);
        let mut out = Vec::new();
        for v in &self.verticals {
            for i in 0..per_vertical {
                let noun = v.nouns.choose(&mut rng).expect("nouns");
                let values: Vec<usize> = v
                    .attributes
                    .iter()
                    .map(|&a| rng.gen_range(0..self.features[a].values.len()))
                    .collect();
                let labels: Vec<String> = v
                    .attributes
                    .iter()
                    .zip(&values)
                    .filter_map(|(&a, &val)| self.value_text(a, val))
                    .collect();
                let mut title: Vec<String> = labels.iter().take(2).map(|l| capitalize(l)).collect();
                title.push(capitalize(noun));
                let mut keywords = vec![noun.clone(), v.name.clone()];
                keywords.extend(labels.iter().cloned());
                out.push(ProductRecord {
                    product_id: format!("{}-{:03}", v.name, i),
                    vertical: v.name.clone(),
                    title: title.join(" "),
                    keywords,
                    attribute_text: labels.join(" "),
                });
            }
        }
        out
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
