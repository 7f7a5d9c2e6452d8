//! Feature selector: a relevance score `s` and an uncertainty `σ` per feature,
//! top-k selection, and the two training loops.
//!
//! `s_i = w_i · φ_i` with meta-features `φ_i = [confidence, gate score, 1, σ_i]`.
//! `σ_i = α_i / (α_i + β_i)` is the posterior mean mismatch probability under
//! a Beta(1, 1) prior. Author labels move only `(α, β)`; downstream rewards
//! move only `w`.

use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};
use crate::features::CandidatePool;
use crate::scalar::{sigmoid, Scalar};
use crate::snapshot::Checksum;
use crate::text::{cosine_distance, featurize};
use crate::types::{AuthorValue, FeatureRegistry, FeatureValue};

pub const META_DIM: usize = 4;
pub const INITIAL_WEIGHTS: [f64; META_DIM] = [0.5, 1.0, 0.0, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Run every gated feature model, then rank the predicted values.
    SelectValues,
    /// Rank gated features before running their models; only the selected
    /// models are evaluated.
    SelectModels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorParams<T> {
    /// Registry order.
    pub feature_ids: Vec<String>,
    pub weights: Vec<[T; META_DIM]>,
    pub alpha: Vec<T>,
    pub beta: Vec<T>,
    pub k: usize,
    pub mode: SelectionMode,
    pub learning_rate: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFeature<T> {
    pub feature_id: String,
    pub score: T,
    pub sigma: T,
    pub meta: [T; META_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorOutput<T> {
    /// Pool order.
    pub scored: Vec<ScoredFeature<T>>,
    /// Top-k by score, descending; ties by lower feature_id.
    pub selected: Vec<String>,
    pub short_selection: bool,
}

impl<T: Scalar> SelectorOutput<T> {
    pub fn get(&self, feature_id: &str) -> Option<&ScoredFeature<T>> {
        self.scored.iter().find(|s| s.feature_id == feature_id)
    }

    /// Meta-feature vectors of the selected features, in selection order.
    pub fn selected_meta(&self) -> Vec<[T; META_DIM]> {
        self.selected
            .iter()
            .map(|id| self.get(id).expect("selected comes from scored").meta)
            .collect()
    }
}

/// Outcome of comparing a prediction with an author answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UncertaintyUpdate<T> {
    Applied { alpha: T, beta: T },
    Abstained,
}

impl<T: Scalar> SelectorParams<T> {
    pub fn new(registry: &FeatureRegistry, k: usize, mode: SelectionMode, learning_rate: T) -> Self {
        let n = registry.len();
        SelectorParams {
            feature_ids: registry.specs().iter().map(|s| s.feature_id.clone()).collect(),
            weights: vec![INITIAL_WEIGHTS.map(T::of); n],
            alpha: vec![T::one(); n],
            beta: vec![T::one(); n],
            k,
            mode,
            learning_rate,
        }
    }

    fn index(&self, feature_id: &str) -> Result<usize> {
        self.feature_ids
            .iter()
            .position(|f| f == feature_id)
            .ok_or_else(|| EchoError::UnknownFeature(feature_id.to_string()))
    }

    pub fn sigma(&self, i: usize) -> T {
        self.alpha[i] / (self.alpha[i] + self.beta[i])
    }

    pub fn sigma_of(&self, feature_id: &str) -> Result<T> {
        Ok(self.sigma(self.index(feature_id)?))
    }

    pub fn sigmas(&self) -> Vec<T> {
        (0..self.feature_ids.len()).map(|i| self.sigma(i)).collect()
    }

    pub fn meta_features(&self, i: usize, confidence: T, gate_score: T) -> [T; META_DIM] {
        [confidence, gate_score, T::one(), self.sigma(i)]
    }

    pub fn relevance_score(&self, i: usize, meta: &[T; META_DIM]) -> T {
        self.weights[i]
            .iter()
            .zip(meta)
            .fold(T::zero(), |acc, (w, p)| acc + *w * *p)
    }

    pub fn score_and_select(&self, pool: &CandidatePool<T>) -> Result<SelectorOutput<T>> {
        let mut scored = Vec::with_capacity(pool.len());
        for e in &pool.entries {
            let i = self.index(&e.feature_id)?;
            let meta = self.meta_features(i, e.value.confidence(), e.gate_score);
            scored.push(ScoredFeature {
                feature_id: e.feature_id.clone(),
                score: self.relevance_score(i, &meta),
                sigma: self.sigma(i),
                meta,
            });
        }
        let mut order: Vec<&ScoredFeature<T>> = scored.iter().collect();
        order.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("finite scores")
                .then_with(|| a.feature_id.cmp(&b.feature_id))
        });
        let take = self.k.min(order.len());
        let selected = order[..take].iter().map(|s| s.feature_id.clone()).collect();
        Ok(SelectorOutput {
            short_selection: scored.len() < self.k,
            scored,
            selected,
        })
    }

    /// Posterior update from one author answer. Only `feature_id`'s counters
    /// change; free-text answers add the fractional cosine distance.
    pub fn update_uncertainty(
        &mut self,
        feature_id: &str,
        predicted: &FeatureValue<T>,
        author: &AuthorValue,
    ) -> Result<UncertaintyUpdate<T>> {
        let i = self.index(feature_id)?;
        let d = match (predicted, author) {
            (_, AuthorValue::Abstain) => return Ok(UncertaintyUpdate::Abstained),
            (FeatureValue::FreeText { embedding, .. }, AuthorValue::FreeText(text)) => {
                cosine_distance(embedding, &featurize(text, embedding.dim))
            }
            (FeatureValue::Abstain, AuthorValue::FreeText(_)) => T::one(),
            (_, AuthorValue::FreeText(_)) => {
                return Err(EchoError::KindMismatch(format!("free text answer for `{feature_id}`")))
            }
            (p, a) => {
                if p.class_index().is_some() && p.class_index() == a.class_index() {
                    T::zero()
                } else {
                    T::one()
                }
            }
        };
        self.alpha[i] += d;
        self.beta[i] += T::one() - d;
        Ok(UncertaintyUpdate::Applied {
            alpha: self.alpha[i],
            beta: self.beta[i],
        })
    }

    /// Binary cross-entropy between `sigmoid(mean selected s)` and `reward`.
    pub fn relevance_loss(&self, selected: &[String], meta: &[[T; META_DIM]], reward: bool) -> Result<T> {
        let p = sigmoid(self.mean_score(selected, meta)?);
        let eps = T::min_positive_value();
        Ok(if reward {
            -p.max(eps).ln()
        } else {
            -(T::one() - p).max(eps).ln()
        })
    }

    fn mean_score(&self, selected: &[String], meta: &[[T; META_DIM]]) -> Result<T> {
        if selected.is_empty() || selected.len() != meta.len() {
            return Err(EchoError::InvalidParam(
                "relevance update needs one meta vector per selected feature".into(),
            ));
        }
        let mut sum = T::zero();
        for (id, phi) in selected.iter().zip(meta) {
            sum += self.relevance_score(self.index(id)?, phi);
        }
        Ok(sum / T::of(selected.len() as f64))
    }

    /// Gradient of [`Self::relevance_loss`] w.r.t. each selected `w_i`, in
    /// selection order. `φ` is held constant.
    pub fn relevance_gradient(
        &self,
        selected: &[String],
        meta: &[[T; META_DIM]],
        reward: bool,
    ) -> Result<Vec<[T; META_DIM]>> {
        let m = self.mean_score(selected, meta)?;
        let r = if reward { T::one() } else { T::zero() };
        let scale = (sigmoid(m) - r) / T::of(selected.len() as f64);
        Ok(meta.iter().map(|phi| phi.map(|p| scale * p)).collect())
    }

    /// One SGD step on the relevance loss; touches only the selected `w_i`.
    pub fn update_relevance(
        &mut self,
        selected: &[String],
        meta: &[[T; META_DIM]],
        reward: bool,
    ) -> Result<()> {
        let grads = self.relevance_gradient(selected, meta, reward)?;
        let lr = self.learning_rate;
        for (id, g) in selected.iter().zip(grads) {
            let i = self.index(id)?;
            for (w, gi) in self.weights[i].iter_mut().zip(g) {
                *w -= lr * gi;
            }
        }
        debug_assert!(self.weights.iter().flatten().all(|w| w.is_finite()));
        Ok(())
    }

    pub fn weights_checksum(&self) -> u64 {
        let mut c = Checksum::default();
        for w in self.weights.iter().flatten() {
            c.word(w.bits());
        }
        c.finish()
    }

    pub fn counters_checksum(&self) -> u64 {
        let mut c = Checksum::default();
        for (a, b) in self.alpha.iter().zip(&self.beta) {
            c.word(a.bits());
            c.word(b.bits());
        }
        c.finish()
    }

    pub fn checksum(&self) -> u64 {
        let mut c = Checksum::default();
        c.word(self.weights_checksum());
        c.word(self.counters_checksum());
        c.word(self.k as u64);
        c.word(self.learning_rate.bits());
        c.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::PoolEntry;
    use crate::types::{FeatureKind, FeatureSpec};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn registry(n: usize) -> FeatureRegistry {
        let specs = (0..n)
            .map(|i| FeatureSpec {
                feature_id: format!("f{i:02}"),
                name: format!("f{i:02}"),
                kind: FeatureKind::Categorical,
                label_space: ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
                relevance_keywords: vec![],
                description: String::new(),
                question_template: None,
            })
            .collect();
        FeatureRegistry::new(specs).unwrap()
    }

    /// Pool whose scores under weights `[0, 1, 0, 0]` equal `gate`.
    fn gate_pool(gate: &[f64]) -> CandidatePool<f64> {
        CandidatePool {
            session_id: "s".into(),
            turn_index: 0,
            entries: gate
                .iter()
                .enumerate()
                .map(|(i, g)| PoolEntry {
                    feature_id: format!("f{i:02}"),
                    value: FeatureValue::Categorical { index: 0, confidence: 0.25 },
                    gate_score: *g,
                })
                .collect(),
        }
    }

    fn gate_only(n: usize, k: usize) -> SelectorParams<f64> {
        let mut p = SelectorParams::new(&registry(n), k, SelectionMode::SelectValues, 0.1);
        for w in p.weights.iter_mut() {
            *w = [0.0, 1.0, 0.0, 0.0];
        }
        p
    }

    fn cat(index: usize) -> FeatureValue<f64> {
        FeatureValue::Categorical { index, confidence: 0.5 }
    }

    #[test]
    fn top_k_is_argsort_with_id_tie_break() {
        let out = gate_only(3, 2).score_and_select(&gate_pool(&[0.9, 0.1, 0.5])).unwrap();
        assert_eq!(out.selected, vec!["f00", "f02"]);
        let out = gate_only(3, 2).score_and_select(&gate_pool(&[0.3, 0.3, 0.3])).unwrap();
        assert_eq!(out.selected, vec!["f00", "f01"]);
        let out = gate_only(3, 5).score_and_select(&gate_pool(&[0.3, 0.2, 0.1])).unwrap();
        assert_eq!(out.selected.len(), 3);
        assert!(out.short_selection);
    }

    #[test]
    fn fresh_sigma_is_half_and_moves_by_posterior_arithmetic() {
        let mut p = SelectorParams::<f64>::new(&registry(2), 4, SelectionMode::SelectValues, 0.1);
        assert!(p.sigmas().iter().all(|s| *s == 0.5));
        p.update_uncertainty("f00", &cat(1), &AuthorValue::Categorical(1)).unwrap();
        assert!((p.sigma(0) - 1.0 / 3.0).abs() < 1e-15);
        p.update_uncertainty("f01", &cat(1), &AuthorValue::Categorical(2)).unwrap();
        assert!((p.sigma(1) - 2.0 / 3.0).abs() < 1e-15);
        let before = p.clone();
        assert_eq!(
            p.update_uncertainty("f01", &cat(1), &AuthorValue::Abstain).unwrap(),
            UncertaintyUpdate::Abstained
        );
        assert_eq!(p, before);
    }

    #[test]
    fn free_text_update_is_fractional() {
        let mut p = SelectorParams::<f64>::new(&registry(1), 4, SelectionMode::SelectValues, 0.1);
        let e = featurize("teal", 64);
        let predicted = FeatureValue::FreeText { text: "teal".into(), embedding: e, confidence: 1.0 };
        p.update_uncertainty("f00", &predicted, &AuthorValue::FreeText("teal".into())).unwrap();
        assert!((p.alpha[0] - 1.0).abs() < 1e-12 && (p.beta[0] - 2.0).abs() < 1e-12);
        p.update_uncertainty("f00", &predicted, &AuthorValue::FreeText("orange".into())).unwrap();
        let d = cosine_distance(&featurize::<f64>("teal", 64), &featurize("orange", 64));
        assert!((p.alpha[0] - (1.0 + d)).abs() < 1e-12);
        assert!((p.alpha[0] + p.beta[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_tracks_seeded_mismatch_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        let mut p = SelectorParams::<f64>::new(&registry(1), 4, SelectionMode::SelectValues, 0.1);
        for _ in 0..200 {
            let answer = if rng.gen_bool(0.3) { 1 } else { 0 };
            p.update_uncertainty("f00", &cat(0), &AuthorValue::Categorical(answer)).unwrap();
        }
        assert!((p.sigma(0) - 0.3).abs() <= 0.05, "{}", p.sigma(0));
    }

    fn selected_and_meta(p: &SelectorParams<f64>, gate: &[f64]) -> (Vec<String>, Vec<[f64; META_DIM]>) {
        let out = p.score_and_select(&gate_pool(gate)).unwrap();
        let meta = out.selected_meta();
        (out.selected, meta)
    }

    #[test]
    fn positive_reward_raises_every_selected_score_and_masks_the_rest() {
        let mut p = SelectorParams::<f64>::new(&registry(6), 3, SelectionMode::SelectValues, 0.1);
        let (sel, meta) = selected_and_meta(&p, &[0.9, 0.2, 0.8, 0.1, 0.7, 0.3]);
        let before = p.clone();
        p.update_relevance(&sel, &meta, true).unwrap();
        for (id, phi) in sel.iter().zip(&meta) {
            let i = p.index(id).unwrap();
            assert!(p.relevance_score(i, phi) > before.relevance_score(i, phi));
        }
        for i in 0..6 {
            if !sel.contains(&p.feature_ids[i]) {
                assert_eq!(p.weights[i].map(f64::to_bits), before.weights[i].map(f64::to_bits));
            }
        }
        assert_eq!(p.counters_checksum(), before.counters_checksum());
    }

    #[test]
    fn uncertainty_update_leaves_weights_alone() {
        let mut p = SelectorParams::<f64>::new(&registry(3), 3, SelectionMode::SelectValues, 0.1);
        let w = p.weights_checksum();
        p.update_uncertainty("f01", &cat(0), &AuthorValue::Categorical(3)).unwrap();
        assert_eq!(w, p.weights_checksum());
    }

    #[test]
    fn relevance_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let h = 1e-6;
        for _ in 0..100 {
            let n = rng.gen_range(2..8);
            let mut p = SelectorParams::<f64>::new(&registry(n), rng.gen_range(1..=n), SelectionMode::SelectValues, 0.1);
            for w in p.weights.iter_mut().flatten() {
                *w = rng.gen_range(-2.0..2.0);
            }
            for i in 0..n {
                p.alpha[i] = rng.gen_range(1.0..20.0);
                p.beta[i] = rng.gen_range(1.0..20.0);
            }
            let gate: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut pool = gate_pool(&gate);
            for e in pool.entries.iter_mut() {
                e.value = FeatureValue::Categorical { index: 0, confidence: rng.gen_range(0.25..1.0) };
            }
            let out = p.score_and_select(&pool).unwrap();
            let meta = out.selected_meta();
            let reward = rng.gen_bool(0.5);
            let g = p.relevance_gradient(&out.selected, &meta, reward).unwrap();
            for (s, id) in out.selected.iter().enumerate() {
                let i = p.index(id).unwrap();
                for d in 0..META_DIM {
                    let mut plus = p.clone();
                    plus.weights[i][d] += h;
                    let mut minus = p.clone();
                    minus.weights[i][d] -= h;
                    let fd = (plus.relevance_loss(&out.selected, &meta, reward).unwrap()
                        - minus.relevance_loss(&out.selected, &meta, reward).unwrap())
                        / (2.0 * h);
                    let an = g[s][d];
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                    assert!(rel <= 1e-5 || (an - fd).abs() < 1e-9, "analytic {an} fd {fd}");
                }
            }
        }
    }

    #[test]
    fn relevance_update_rejects_mismatched_inputs() {
        let mut p = SelectorParams::<f64>::new(&registry(2), 2, SelectionMode::SelectValues, 0.1);
        assert!(p.update_relevance(&[], &[], true).is_err());
        assert!(p.update_relevance(&["zz".into()], &[[0.0; 4]], true).is_err());
    }

    proptest! {
        #[test]
        fn selection_is_permutation_equivariant(
            gate in prop::collection::vec(0u8..5, 1..12),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            let gate: Vec<f64> = gate.into_iter().map(|g| f64::from(g) / 4.0).collect();
            let p = gate_only(gate.len(), k);
            let pool = gate_pool(&gate);
            let mut shuffled = pool.clone();
            shuffled.entries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                p.score_and_select(&pool).unwrap().selected,
                p.score_and_select(&shuffled).unwrap().selected
            );
        }

        #[test]
        fn sigma_stays_strictly_inside_unit_interval(
            answers in prop::collection::vec(0usize..4, 0..300),
        ) {
            let mut p = SelectorParams::<f64>::new(&registry(1), 1, SelectionMode::SelectValues, 0.1);
            for a in answers {
                p.update_uncertainty("f00", &cat(0), &AuthorValue::Categorical(a)).unwrap();
                let s = p.sigma(0);
                prop_assert!(s > 0.0 && s < 1.0);
            }
        }
    }
}
