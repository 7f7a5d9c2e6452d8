//! Domain types shared across the pipeline.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};
use crate::scalar::Scalar;
use crate::text::{featurize, SparseVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

/// One chat turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub session_id: String,
    /// Author of the text; sessions of the same user share spam history.
    pub user_id: String,
    pub turn_index: u64,
    pub author_role: Role,
    pub text: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Binary,
    Categorical,
    FreeText,
}

/// Registry entry for one feature the models can predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub feature_id: String,
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub label_space: Vec<String>,
    #[serde(default)]
    pub relevance_keywords: Vec<String>,
    #[serde(default)]
    pub description: String,
    /// Survey question template; `{tokens}` is replaced by message key tokens.
    #[serde(default)]
    pub question_template: Option<String>,
}

pub const BINARY_LABELS: [&str; 2] = ["Yes", "No"];

impl FeatureSpec {
    /// Number of classes of the categorical/binary predictor (0 for free text).
    pub fn class_count(&self) -> usize {
        match self.kind {
            FeatureKind::Binary => 2,
            FeatureKind::Categorical => self.label_space.len(),
            FeatureKind::FreeText => 0,
        }
    }

    /// Human-readable rendering of a value.
    pub fn label_text<T>(&self, value: &FeatureValue<T>) -> Option<String> {
        match value {
            FeatureValue::Binary { value, .. } => {
                Some(BINARY_LABELS[usize::from(!*value)].to_string())
            }
            FeatureValue::Categorical { index, .. } => self.label_space.get(*index).cloned(),
            FeatureValue::FreeText { text, .. } if !text.is_empty() => Some(text.clone()),
            _ => None,
        }
    }

    /// Embedding of a value in the product space, used by the recommender.
    ///
    /// Binary features embed their own name when true and contribute nothing
    /// when false.
    pub fn value_embedding<T: Scalar>(
        &self,
        value: &FeatureValue<T>,
        dim: usize,
    ) -> Option<SparseVec<T>> {
        let text = match value {
            FeatureValue::Binary { value: true, .. } => self.name.replace('_', " "),
            FeatureValue::Binary { value: false, .. } | FeatureValue::Abstain => return None,
            FeatureValue::Categorical { index, .. } => self.label_space.get(*index)?.clone(),
            FeatureValue::FreeText { text, .. } => text.clone(),
        };
        let v = featurize(&text, dim);
        (!v.empty).then_some(v)
    }

    pub fn question(&self, key_tokens: &[String]) -> String {
        let tokens = if key_tokens.is_empty() {
            "this".to_string()
        } else {
            key_tokens.join(" ")
        };
        match &self.question_template {
            Some(t) => t.replace("{tokens}", &tokens),
            None => format!(
                "Which best describes your {} when asking about {}?",
                self.name.replace('_', " "),
                tokens
            ),
        }
    }
}

/// Ordered, validated feature vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRegistry {
    specs: Vec<FeatureSpec>,
    index: HashMap<String, usize>,
}

impl FeatureRegistry {
    pub fn new(specs: Vec<FeatureSpec>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, s) in specs.iter().enumerate() {
            if s.feature_id.is_empty() {
                return Err(EchoError::Registry(format!("entry {i} has an empty feature_id")));
            }
            if index.insert(s.feature_id.clone(), i).is_some() {
                return Err(EchoError::Registry(format!(
                    "duplicate feature_id `{}`",
                    s.feature_id
                )));
            }
            if s.kind == FeatureKind::Categorical {
                let mut distinct = s.label_space.clone();
                distinct.sort();
                distinct.dedup();
                if distinct.len() < 2 || distinct.len() != s.label_space.len() {
                    return Err(EchoError::Registry(format!(
                        "categorical feature `{}` needs at least two distinct options",
                        s.feature_id
                    )));
                }
            }
        }
        Ok(FeatureRegistry { specs, index })
    }

    /// Reads one JSON `FeatureSpec` per line; blank lines are skipped.
    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut specs = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let spec: FeatureSpec = serde_json::from_str(&line)
                .map_err(|e| EchoError::Registry(format!("line {}: {e}", n + 1)))?;
            specs.push(spec);
        }
        Self::new(specs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_jsonl(std::io::BufReader::new(file))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.specs {
            out.push_str(&serde_json::to_string(s).expect("spec serializes"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn position(&self, feature_id: &str) -> Option<usize> {
        self.index.get(feature_id).copied()
    }

    pub fn get(&self, feature_id: &str) -> Result<&FeatureSpec> {
        self.position(feature_id)
            .map(|i| &self.specs[i])
            .ok_or_else(|| EchoError::UnknownFeature(feature_id.to_string()))
    }
}

/// A predicted feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureValue<T> {
    Binary {
        value: bool,
        confidence: T,
    },
    Categorical {
        index: usize,
        confidence: T,
    },
    FreeText {
        text: String,
        embedding: SparseVec<T>,
        confidence: T,
    },
    /// No prediction possible (blank input).
    Abstain,
}

impl<T: Scalar> FeatureValue<T> {
    pub fn confidence(&self) -> T {
        match self {
            FeatureValue::Binary { confidence, .. }
            | FeatureValue::Categorical { confidence, .. }
            | FeatureValue::FreeText { confidence, .. } => *confidence,
            FeatureValue::Abstain => T::zero(),
        }
    }

    pub fn is_abstain(&self) -> bool {
        matches!(self, FeatureValue::Abstain)
    }

    /// Class index for binary (`Yes` = 0) and categorical values.
    pub fn class_index(&self) -> Option<usize> {
        match self {
            FeatureValue::Binary { value, .. } => Some(usize::from(!*value)),
            FeatureValue::Categorical { index, .. } => Some(*index),
            _ => None,
        }
    }
}

/// A ground-truth value supplied by the author.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AuthorValue {
    Binary(bool),
    Categorical(usize),
    FreeText(String),
    Abstain,
}

impl AuthorValue {
    pub fn is_abstain(&self) -> bool {
        matches!(self, AuthorValue::Abstain)
    }

    pub fn class_index(&self) -> Option<usize> {
        match self {
            AuthorValue::Binary(b) => Some(usize::from(!*b)),
            AuthorValue::Categorical(i) => Some(*i),
            _ => None,
        }
    }

    pub fn matches_kind(&self, spec: &FeatureSpec) -> bool {
        match (self, spec.kind) {
            (AuthorValue::Abstain, _) => true,
            (AuthorValue::Binary(_), FeatureKind::Binary) => true,
            (AuthorValue::Categorical(i), FeatureKind::Categorical) => *i < spec.label_space.len(),
            (AuthorValue::FreeText(_), FeatureKind::FreeText) => true,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(id: &str, labels: &[&str]) -> FeatureSpec {
        FeatureSpec {
            feature_id: id.into(),
            name: id.into(),
            kind: FeatureKind::Categorical,
            label_space: labels.iter().map(|s| s.to_string()).collect(),
            relevance_keywords: vec![],
            description: String::new(),
            question_template: None,
        }
    }

    #[test]
    fn registry_rejects_duplicates_and_degenerate_label_spaces() {
        assert!(FeatureRegistry::new(vec![cat("a", &["x", "y"]), cat("a", &["x", "y"])]).is_err());
        assert!(FeatureRegistry::new(vec![cat("a", &["x"])]).is_err());
        assert!(FeatureRegistry::new(vec![cat("a", &["x", "x"])]).is_err());
        let r = FeatureRegistry::new(vec![cat("a", &["x", "y"]), cat("b", &["p", "q", "r"])]).unwrap();
        assert_eq!(r.position("b"), Some(1));
        assert!(r.get("zz").is_err());
    }

    #[test]
    fn registry_jsonl_round_trip() {
        let r = FeatureRegistry::new(vec![cat("a", &["x", "y"])]).unwrap();
        let back = FeatureRegistry::from_jsonl(r.to_jsonl().as_bytes()).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn binary_labels_render_yes_no() {
        let mut s = cat("eco", &[]);
        s.kind = FeatureKind::Binary;
        let v = FeatureValue::Binary { value: false, confidence: 0.7f64 };
        assert_eq!(s.label_text(&v).as_deref(), Some("No"));
        assert_eq!(v.class_index(), Some(1));
        assert!(s.value_embedding(&v, 64).is_none());
    }
}
