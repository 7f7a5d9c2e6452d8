//! Simulated authors: latent feature values, noisy survey answers and a
//! logistic click model with novelty decay.

use echo_core::rng::StreamRng;
use echo_core::tasks::{Answer, LabelTask, TaskKind};
use echo_core::text::{cosine_similarity, featurize, SparseVec};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClickModel {
    /// Base logit b.
    pub base_logit: f64,
    /// Affinity weight w.
    pub affinity_weight: f64,
    /// Novelty amplitude ν.
    pub novelty_amplitude: f64,
    /// Novelty decay τ, in impressions.
    pub novelty_decay: f64,
}

impl Default for ClickModel {
    fn default() -> Self {
        ClickModel {
            base_logit: -4.0,
            affinity_weight: 6.0,
            novelty_amplitude: 1.0,
            novelty_decay: 20.0,
        }
    }
}

impl ClickModel {
    /// `logistic(b + w·affinity + ν·exp(−t/τ))` for an author who has already
    /// seen `prior_impressions` impressions.
    pub fn probability(&self, affinity: f64, prior_impressions: u64) -> f64 {
        let novelty = if self.novelty_decay > 0.0 {
            self.novelty_amplitude * (-(prior_impressions as f64) / self.novelty_decay).exp()
        } else {
            0.0
        };
        logistic(self.base_logit + self.affinity_weight * affinity + novelty)
    }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuthorProfile {
    pub label_noise: f64,
    pub abstain_prob: f64,
    pub completion_prob: f64,
    pub click: ClickModel,
}

impl Default for AuthorProfile {
    fn default() -> Self {
        AuthorProfile {
            label_noise: 0.1,
            abstain_prob: 0.02,
            completion_prob: 0.843,
            click: ClickModel::default(),
        }
    }
}

impl AuthorProfile {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("label_noise", self.label_noise),
            ("abstain_prob", self.abstain_prob),
            ("completion_prob", self.completion_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be a probability, got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimAuthor {
    pub author_id: String,
    /// Value index per world feature.
    pub latent: Vec<usize>,
    /// Sampling weight per vertical.
    pub interests: Vec<f64>,
    pub profile: AuthorProfile,
    /// Unit vector of the author's value texts in product space.
    pub preference: SparseVec<f64>,
}

impl SimAuthor {
    pub fn generate(author_id: String, world: &World, profile: AuthorProfile, dim: usize, rng: &mut StreamRng) -> Self {
        let latent: Vec<usize> = world.features.iter().map(|f| rng.gen_range(0..f.values.len())).collect();
        let interests: Vec<f64> = world.verticals.iter().map(|_| rng.gen_range(0.2..1.0)).collect();
        let text: Vec<String> = latent
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| world.value_text(i, v))
            .collect();
        let preference = featurize(&text.join(" "), dim);
        SimAuthor {
            author_id,
            latent,
            interests,
            profile,
            preference,
        }
    }

    pub fn latent_label<'w>(&self, world: &'w World, feature: usize) -> &'w str {
        &world.features[feature].values[self.latent[feature]]
    }

    /// Answers one survey task.
    pub fn answer_task(&self, world: &World, task: &LabelTask, rng: &mut StreamRng) -> Answer {
        if rng.gen_bool(self.profile.abstain_prob) {
            return Answer::Abstain;
        }
        let Some(fi) = world.feature_index(&task.feature_id) else {
            return Answer::Abstain;
        };
        let truth = self.latent_label(world, fi);
        let noisy = rng.gen_bool(self.profile.label_noise);
        match task.kind {
            TaskKind::MultipleChoice => {
                let true_idx = task.options.iter().position(|o| o.eq_ignore_ascii_case(truth));
                match (true_idx, noisy) {
                    (Some(t), false) => Answer::Option(t),
                    (Some(t), true) => {
                        let mut other = rng.gen_range(0..task.options.len() - 1);
                        if other >= t {
                            other += 1;
                        }
                        Answer::Option(other)
                    }
                    (None, _) => Answer::Option(rng.gen_range(0..task.options.len())),
                }
            }
            TaskKind::FreeText => {
                if noisy {
                    Answer::Text(perturb(truth, rng))
                } else {
                    Answer::Text(truth.to_string())
                }
            }
        }
    }

    pub fn affinity(&self, product_embedding: &SparseVec<f64>) -> f64 {
        cosine_similarity(&self.preference, product_embedding)
    }

    pub fn click_decision(
        &self,
        product_embedding: &SparseVec<f64>,
        prior_impressions: u64,
        multiplier: f64,
        rng: &mut StreamRng,
    ) -> bool {
        let p = self.profile.click.probability(self.affinity(product_embedding), prior_impressions) * multiplier;
        rng.gen_bool(p.clamp(0.0, 1.0))
    }
}

/// Replaces one character with a different lowercase letter.
fn perturb(word: &str, rng: &mut StreamRng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return "x".to_string();
    }
    let i = rng.gen_range(0..chars.len());
    let mut c = (b'a' + rng.gen_range(0..26u8)) as char;
    if c == chars[i] {
        c = if c == 'z' { 'a' } else { (c as u8 + 1) as char };
    }
    chars[i] = c;
    chars.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use echo_core::RngSeed;

    fn author(noise: f64, abstain: f64) -> (World, SimAuthor) {
        let w = World::standard();
        let profile = AuthorProfile {
            label_noise: noise,
            abstain_prob: abstain,
            ..AuthorProfile::default()
        };
        let mut rng = RngSeed(1).substream("author", 0);
        let a = SimAuthor::generate("a0".into(), &w, profile, 4096, &mut rng);
        (w, a)
    }

    fn mc_task(w: &World, feature: usize) -> LabelTask {
        LabelTask {
            task_id: "t".into(),
            session_id: "s".into(),
            feature_id: w.features[feature].id().to_string(),
            question_text: "q".into(),
            kind: TaskKind::MultipleChoice,
            options: w.features[feature].values.iter().rev().cloned().collect(),
            predicted_option_index: Some(0),
            min_read_seconds: 5.0,
            created_at: 0,
        }
    }

    fn true_rate(noise: f64, trials: usize) -> f64 {
        let (w, a) = author(noise, 0.0);
        let task = mc_task(&w, 0);
        let truth = task.options.iter().position(|o| o == a.latent_label(&w, 0)).unwrap();
        let mut rng = RngSeed(2).substream("answers", 0);
        let hits = (0..trials)
            .filter(|_| a.answer_task(&w, &task, &mut rng) == Answer::Option(truth))
            .count();
        hits as f64 / trials as f64
    }

    #[test]
    fn noiseless_and_fully_noisy_authors() {
        assert_eq!(true_rate(0.0, 500), 1.0);
        assert_eq!(true_rate(1.0, 500), 0.0);
    }

    #[test]
    fn noise_rate_matches_monte_carlo() {
        let r = true_rate(0.1, 10_000);
        assert!((r - 0.9).abs() < 0.01, "{r}");
    }

    #[test]
    fn free_text_answers_are_single_tokens() {
        let (w, a) = author(1.0, 0.0);
        let fi = w.feature_index("hobby").unwrap();
        let task = LabelTask {
            kind: TaskKind::FreeText,
            options: vec![],
            predicted_option_index: None,
            ..mc_task(&w, fi)
        };
        let mut rng = RngSeed(3).substream("answers", 0);
        for _ in 0..50 {
            match a.answer_task(&w, &task, &mut rng) {
                Answer::Text(t) => {
                    assert_eq!(t.len(), a.latent_label(&w, fi).len());
                    assert_ne!(t, a.latent_label(&w, fi));
                    assert_eq!(echo_core::text::tokenize(&t).len(), 1);
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn abstains_at_the_configured_rate() {
        let (w, a) = author(0.0, 1.0);
        let mut rng = RngSeed(4).substream("answers", 0);
        assert_eq!(a.answer_task(&w, &mc_task(&w, 2), &mut rng), Answer::Abstain);
    }

    #[test]
    fn click_probability_closed_forms() {
        let m = ClickModel {
            base_logit: -2.0,
            affinity_weight: 0.0,
            novelty_amplitude: 0.0,
            novelty_decay: 10.0,
        };
        assert_eq!(m.probability(0.7, 0), logistic(-2.0));
        let m = ClickModel {
            novelty_amplitude: 3.0,
            ..m
        };
        assert!((m.probability(0.0, 10_000) - logistic(-2.0)).abs() < 1e-12);
        assert!(m.probability(0.0, 0) > m.probability(0.0, 5));
    }

    #[test]
    fn measured_ctr_matches_closed_form() {
        let (w, a) = author(0.0, 0.0);
        let product = featurize::<f64>(&w.features[0].values[a.latent[0]], 4096);
        let mut rng = RngSeed(5).substream("clicks", 0);
        let n = 10_000u64;
        let mut clicks = 0;
        let mut expected = 0.0;
        for t in 0..n {
            let prior = t % 40;
            expected += a.profile.click.probability(a.affinity(&product), prior);
            if a.click_decision(&product, prior, 1.0, &mut rng) {
                clicks += 1;
            }
        }
        let measured = clicks as f64 / n as f64;
        let analytic = expected / n as f64;
        assert!((measured - analytic).abs() < 0.01, "{measured} vs {analytic}");
    }

    #[test]
    fn preference_is_unit_norm() {
        let (_, a) = author(0.1, 0.02);
        assert!((a.preference.norm() - 1.0).abs() < 1e-12);
    }
}
