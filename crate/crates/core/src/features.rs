//! Per-feature online models.
//!
//! Each registered feature owns one hashed-linear learner. Binary and
//! categorical features use a softmax classifier over the featurized message;
//! free-text features map the message into a small embedding space where the
//! author's answer is embedded too. A model is only ever updated by author
//! labels for its own feature.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};
use crate::scalar::{softmax, Scalar};
use crate::snapshot::Checksum;
use crate::text::{cosine_distance, featurize, SparseVec};
use crate::types::{AuthorValue, FeatureKind, FeatureRegistry, FeatureSpec, FeatureValue};

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_FEATURE_LEARNING_RATE: f64 = 1.0;
const MAX_STORED_LABELS: usize = 256;

/// Softmax classifier; weights stored column-wise, one column per touched
/// input bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams<T> {
    pub classes: usize,
    pub columns: BTreeMap<u32, Vec<T>>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ClassifierParams<T> {
    pub fn new(classes: usize) -> Self {
        ClassifierParams {
            classes,
            columns: BTreeMap::new(),
            bias: vec![T::zero(); classes],
        }
    }

    pub fn logits(&self, x: &SparseVec<T>) -> Vec<T> {
        let mut z = self.bias.clone();
        for (j, v) in x.iter() {
            if let Some(col) = self.columns.get(&j) {
                for (zc, w) in z.iter_mut().zip(col) {
                    *zc += *w * v;
                }
            }
        }
        z
    }

    pub fn probabilities(&self, x: &SparseVec<T>) -> Vec<T> {
        softmax(&self.logits(x))
    }

    /// Cross-entropy of `label` under the model.
    pub fn loss(&self, x: &SparseVec<T>, label: usize) -> T {
        -self.probabilities(x)[label].ln()
    }

    /// `(p − onehot)`: gradient w.r.t. the logits, hence w.r.t. the bias; the
    /// weight gradient for column `j` is this times `x_j`.
    pub fn logit_gradient(&self, x: &SparseVec<T>, label: usize) -> Vec<T> {
        let mut g = self.probabilities(x);
        g[label] -= T::one();
        g
    }

    pub fn sgd_step(&mut self, x: &SparseVec<T>, label: usize, lr: T) {
        let g = self.logit_gradient(x, label);
        for (j, v) in x.iter() {
            let col = self
                .columns
                .entry(j)
                .or_insert_with(|| vec![T::zero(); self.classes]);
            for (w, gc) in col.iter_mut().zip(&g) {
                *w -= lr * *gc * v;
            }
        }
        for (b, gc) in self.bias.iter_mut().zip(&g) {
            *b -= lr * *gc;
        }
    }

    fn checksum_into(&self, c: &mut Checksum) {
        c.word(self.classes as u64);
        for (j, col) in &self.columns {
            c.word(u64::from(*j));
            for w in col {
                c.word(w.bits());
            }
        }
        for b in &self.bias {
            c.word(b.bits());
        }
    }

    fn is_finite(&self) -> bool {
        self.bias.iter().all(|b| b.is_finite())
            && self.columns.values().flatten().all(|w| w.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredLabel<T> {
    pub text: String,
    pub embedding: SparseVec<T>,
}

/// Free-text predictor: `y = fold(x) + R·x`, compared by cosine distance to
/// the author's answer embedded with the same featurizer at `embed_dim`.
///
/// `fold` re-buckets the message vector into `embed_dim` buckets, so an
/// untrained model predicts the message's own embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams<T> {
    pub embed_dim: usize,
    pub residual: BTreeMap<u32, Vec<T>>,
    pub labels: Vec<StoredLabel<T>>,
}

impl<T: Scalar> EmbeddingParams<T> {
    pub fn new(embed_dim: usize) -> Self {
        EmbeddingParams {
            embed_dim,
            residual: BTreeMap::new(),
            labels: Vec::new(),
        }
    }

    /// Unnormalized image of `x`.
    pub fn image(&self, x: &SparseVec<T>) -> Vec<T> {
        let mut y = x.fold(self.embed_dim).to_dense();
        for (j, v) in x.iter() {
            if let Some(col) = self.residual.get(&j) {
                for (yi, r) in y.iter_mut().zip(col) {
                    *yi += *r * v;
                }
            }
        }
        y
    }

    pub fn embed(&self, x: &SparseVec<T>) -> SparseVec<T> {
        SparseVec::from_dense(&self.image(x)).normalized()
    }

    pub fn embed_label(&self, text: &str) -> SparseVec<T> {
        featurize(text, self.embed_dim)
    }

    /// Clamped cosine distance between the prediction and `target`.
    pub fn loss(&self, x: &SparseVec<T>, target: &SparseVec<T>) -> T {
        cosine_distance(&self.embed(x), target)
    }

    /// Gradient of [`Self::loss`] w.r.t. the image `y`; the residual gradient
    /// for column `j` is this times `x_j`. Zero where the clamp is active.
    pub fn image_gradient(&self, x: &SparseVec<T>, target: &SparseVec<T>) -> Vec<T> {
        let y = self.image(x);
        let n = y.iter().fold(T::zero(), |a, v| a + *v * *v).sqrt();
        let t = target.to_dense();
        if n == T::zero() || target.is_zero() {
            return vec![T::zero(); y.len()];
        }
        let cos = y.iter().zip(&t).fold(T::zero(), |a, (yi, ti)| a + *yi * *ti) / n;
        if cos <= T::zero() {
            return vec![T::zero(); y.len()];
        }
        y.iter()
            .zip(&t)
            .map(|(yi, ti)| -(*ti - cos * *yi / n) / n)
            .collect()
    }

    pub fn sgd_step(&mut self, x: &SparseVec<T>, target: &SparseVec<T>, lr: T) {
        let g = self.image_gradient(x, target);
        for (j, v) in x.iter() {
            let col = self
                .residual
                .entry(j)
                .or_insert_with(|| vec![T::zero(); self.embed_dim]);
            for (r, gi) in col.iter_mut().zip(&g) {
                *r -= lr * *gi * v;
            }
        }
    }

    fn remember(&mut self, text: &str, embedding: SparseVec<T>) {
        if self.labels.iter().any(|l| l.text == text) {
            return;
        }
        if self.labels.len() == MAX_STORED_LABELS {
            self.labels.remove(0);
        }
        self.labels.push(StoredLabel {
            text: text.to_string(),
            embedding,
        });
    }

    /// Closest stored author label to `e`, earliest on ties.
    pub fn nearest_label(&self, e: &SparseVec<T>) -> Option<(&StoredLabel<T>, T)> {
        let mut best: Option<(&StoredLabel<T>, T)> = None;
        for l in &self.labels {
            let d = cosine_distance(e, &l.embedding);
            if best.as_ref().is_none_or(|(_, bd)| d < *bd) {
                best = Some((l, d));
            }
        }
        best
    }

    fn checksum_into(&self, c: &mut Checksum) {
        c.word(self.embed_dim as u64);
        for (j, col) in &self.residual {
            c.word(u64::from(*j));
            for r in col {
                c.word(r.bits());
            }
        }
        for l in &self.labels {
            c.bytes(l.text.as_bytes());
        }
    }

    fn is_finite(&self) -> bool {
        self.residual.values().flatten().all(|r| r.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelParams<T> {
    Classifier(ClassifierParams<T>),
    Embedding(EmbeddingParams<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel<T> {
    pub feature_id: String,
    pub kind: FeatureKind,
    pub params: ModelParams<T>,
    pub update_count: u64,
    pub learning_rate: T,
}

impl<T: Scalar> FeatureModel<T> {
    pub fn new(spec: &FeatureSpec, learning_rate: T, embed_dim: usize) -> Self {
        let params = match spec.kind {
            FeatureKind::FreeText => ModelParams::Embedding(EmbeddingParams::new(embed_dim)),
            _ => ModelParams::Classifier(ClassifierParams::new(spec.class_count())),
        };
        FeatureModel {
            feature_id: spec.feature_id.clone(),
            kind: spec.kind,
            params,
            update_count: 0,
            learning_rate,
        }
    }

    /// Predicted value for a featurized message.
    ///
    /// Classifiers return the argmax class (lowest index on ties) with its
    /// softmax probability as confidence. Free-text models return the nearest
    /// stored author label with `1 − distance` as confidence, or an empty text
    /// with confidence 0 when no label has been seen yet.
    pub fn predict(&self, x: &SparseVec<T>) -> FeatureValue<T> {
        if x.is_zero() {
            return FeatureValue::Abstain;
        }
        match &self.params {
            ModelParams::Classifier(c) => {
                let p = c.probabilities(x);
                let mut best = 0;
                for (i, pi) in p.iter().enumerate() {
                    if *pi > p[best] {
                        best = i;
                    }
                }
                let confidence = p[best];
                match self.kind {
                    FeatureKind::Binary => FeatureValue::Binary {
                        value: best == 0,
                        confidence,
                    },
                    _ => FeatureValue::Categorical {
                        index: best,
                        confidence,
                    },
                }
            }
            ModelParams::Embedding(e) => {
                let embedding = e.embed(x);
                if embedding.is_zero() {
                    return FeatureValue::Abstain;
                }
                let (text, confidence) = match e.nearest_label(&embedding) {
                    Some((l, d)) => (l.text.clone(), T::one() - d),
                    None => (String::new(), T::zero()),
                };
                FeatureValue::FreeText {
                    text,
                    embedding,
                    confidence,
                }
            }
        }
    }

    /// One SGD step toward the author's answer. Abstentions leave the
    /// parameters untouched and return `Ok(false)`.
    pub fn update_from_author(&mut self, x: &SparseVec<T>, author: &AuthorValue) -> Result<bool> {
        let lr = self.learning_rate;
        match (&mut self.params, author) {
            (_, AuthorValue::Abstain) => return Ok(false),
            (ModelParams::Classifier(c), AuthorValue::Binary(_) | AuthorValue::Categorical(_)) => {
                let label = author.class_index().expect("class answer");
                if label >= c.classes {
                    return Err(EchoError::KindMismatch(format!(
                        "class {label} out of range for `{}`",
                        self.feature_id
                    )));
                }
                if x.is_zero() {
                    return Ok(false);
                }
                c.sgd_step(x, label, lr);
            }
            (ModelParams::Embedding(e), AuthorValue::FreeText(text)) => {
                let target = e.embed_label(text);
                if target.is_zero() || x.is_zero() {
                    return Ok(false);
                }
                e.sgd_step(x, &target, lr);
                e.remember(text, target);
            }
            _ => {
                return Err(EchoError::KindMismatch(format!(
                    "{author:?} for {:?} feature `{}`",
                    self.kind, self.feature_id
                )))
            }
        }
        self.update_count += 1;
        debug_assert!(self.is_finite());
        Ok(true)
    }

    pub fn checksum(&self) -> u64 {
        let mut c = Checksum::default();
        c.bytes(self.feature_id.as_bytes());
        c.word(self.update_count);
        c.word(self.learning_rate.bits());
        match &self.params {
            ModelParams::Classifier(p) => p.checksum_into(&mut c),
            ModelParams::Embedding(p) => p.checksum_into(&mut c),
        }
        c.finish()
    }

    pub fn is_finite(&self) -> bool {
        match &self.params {
            ModelParams::Classifier(p) => p.is_finite(),
            ModelParams::Embedding(p) => p.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry<T> {
    pub feature_id: String,
    pub value: FeatureValue<T>,
    pub gate_score: T,
}

/// Predicted values for one message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool<T> {
    pub session_id: String,
    pub turn_index: u64,
    pub entries: Vec<PoolEntry<T>>,
}

impl<T: Scalar> CandidatePool<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, feature_id: &str) -> Option<&PoolEntry<T>> {
        self.entries.iter().find(|e| e.feature_id == feature_id)
    }
}

/// The ensemble, one model per registered feature in registry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEnsemble<T> {
    pub models: Vec<FeatureModel<T>>,
}

impl<T: Scalar> FeatureEnsemble<T> {
    pub fn new(registry: &FeatureRegistry, learning_rate: T, embed_dim: usize) -> Self {
        FeatureEnsemble {
            models: registry
                .specs()
                .iter()
                .map(|s| FeatureModel::new(s, learning_rate, embed_dim))
                .collect(),
        }
    }

    pub fn model(&self, registry: &FeatureRegistry, feature_id: &str) -> Result<&FeatureModel<T>> {
        let i = registry
            .position(feature_id)
            .ok_or_else(|| EchoError::UnknownFeature(feature_id.to_string()))?;
        Ok(&self.models[i])
    }

    /// Runs the models of `gated_ids` (any order) and returns entries in
    /// registry order. `gate_scores` is indexed by registry position.
    pub fn predict_pool(
        &self,
        registry: &FeatureRegistry,
        session_id: &str,
        turn_index: u64,
        x: &SparseVec<T>,
        gated_ids: &[String],
        gate_scores: &[T],
    ) -> Result<CandidatePool<T>> {
        let mut positions = Vec::with_capacity(gated_ids.len());
        for id in gated_ids {
            let p = registry
                .position(id)
                .ok_or_else(|| EchoError::UnknownFeature(id.clone()))?;
            positions.push(p);
        }
        positions.sort_unstable();
        positions.dedup();
        let entries = positions
            .into_iter()
            .map(|p| PoolEntry {
                feature_id: registry.specs()[p].feature_id.clone(),
                value: self.models[p].predict(x),
                gate_score: gate_scores.get(p).copied().unwrap_or(T::zero()),
            })
            .collect();
        Ok(CandidatePool {
            session_id: session_id.to_string(),
            turn_index,
            entries,
        })
    }

    pub fn update_from_author(
        &mut self,
        registry: &FeatureRegistry,
        feature_id: &str,
        x: &SparseVec<T>,
        author: &AuthorValue,
    ) -> Result<bool> {
        let i = registry
            .position(feature_id)
            .ok_or_else(|| EchoError::UnknownFeature(feature_id.to_string()))?;
        if !author.matches_kind(&registry.specs()[i]) {
            return Err(EchoError::KindMismatch(format!("{author:?} for `{feature_id}`")));
        }
        self.models[i].update_from_author(x, author)
    }

    pub fn checksums(&self) -> Vec<u64> {
        self.models.iter().map(|m| m.checksum()).collect()
    }

    pub fn checksum(&self) -> u64 {
        let mut c = Checksum::default();
        for m in &self.models {
            c.word(m.checksum());
        }
        c.finish()
    }

    pub fn snapshot(&self) -> Vec<u8> {
        crate::snapshot::encode(self)
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self> {
        crate::snapshot::decode(bytes)
    }
}
