//! Scenario files: simulation settings plus engine parameters, in TOML.

use std::path::Path;

use echo_core::engine::EngineParams;
use serde::{Deserialize, Serialize};

use crate::author::AuthorProfile;
use crate::error::{Result, SimError};
use crate::message::MessageMix;

/// 2025-10-01T00:00:00Z.
pub const DEFAULT_START_MS: u64 = 1_759_276_800_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub seed: u64,
    pub authors: usize,
    pub sessions: usize,
    /// Sessions that only collect labels; recommendations start after them.
    pub warmup_sessions: usize,
    pub start_ms: u64,
    pub session_spacing_ms: u64,
    pub min_turns: usize,
    pub max_turns: usize,
    pub min_turn_gap_ms: u64,
    pub max_turn_gap_ms: u64,
    pub click_delay_ms: u64,
    pub products_per_vertical: usize,
    /// Held-out accuracy and σ are recorded every this many sessions.
    pub checkpoint_every: usize,
    pub heldout_per_feature: usize,
    /// CTR multiplier per weekday, Monday first.
    pub weekday_multipliers: [f64; 7],
    pub profile: AuthorProfile,
    pub messages: MessageMix,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            seed: 42,
            authors: 200,
            sessions: 5000,
            warmup_sessions: 1500,
            start_ms: DEFAULT_START_MS,
            session_spacing_ms: 720_000,
            min_turns: 4,
            max_turns: 8,
            min_turn_gap_ms: 15_000,
            max_turn_gap_ms: 30_000,
            click_delay_ms: 3_000,
            products_per_vertical: 20,
            checkpoint_every: 250,
            heldout_per_feature: 50,
            weekday_multipliers: [1.0; 7],
            profile: AuthorProfile::default(),
            messages: MessageMix::default(),
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(SimError::Config(why));
        if self.min_turns == 0 || self.min_turns > self.max_turns {
            return bad("min_turns must be in 1..=max_turns".into());
        }
        if self.min_turn_gap_ms > self.max_turn_gap_ms {
            return bad("min_turn_gap_ms exceeds max_turn_gap_ms".into());
        }
        if self.products_per_vertical == 0 {
            return bad("products_per_vertical must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        if self.weekday_multipliers.iter().any(|m| !(0.0..=10.0).contains(m)) {
            return bad("weekday_multipliers must lie in [0, 10]".into());
        }
        self.profile.validate().map_err(SimError::Config)?;
        self.messages.validate().map_err(SimError::Config)?;
        Ok(())
    }

    /// First timestamp at which recommendations are shown.
    pub fn recommend_after_ms(&self) -> u64 {
        self.start_ms + self.warmup_sessions as u64 * self.session_spacing_ms
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: SimScenario,
    pub engine: EngineParams,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        f.scenario.validate()?;
        f.engine.validate().map_err(|e| SimError::Config(e.to_string()))?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Engine parameters as run: the scenario seed and warmup override the
    /// corresponding engine fields.
    pub fn effective_engine(&self) -> EngineParams {
        EngineParams {
            seed: self.scenario.seed,
            recommend_after_ms: self.scenario.recommend_after_ms(),
            ..self.engine.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_scenario() {
        let f = ScenarioFile::parse("").unwrap();
        assert_eq!(f, ScenarioFile::default());
        assert_eq!(f.scenario.authors, 200);
        assert_eq!(f.scenario.sessions, 5000);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut f = ScenarioFile::default();
        f.scenario.sessions = 12;
        f.engine.k = 6;
        assert_eq!(ScenarioFile::parse(&f.to_toml()).unwrap(), f);
    }

    #[test]
    fn partial_tables_and_errors() {
        let f = ScenarioFile::parse("[scenario]\nseed = 7\n[scenario.profile]\nlabel_noise = 0.2\n").unwrap();
        assert_eq!(f.scenario.seed, 7);
        assert_eq!(f.scenario.profile.label_noise, 0.2);
        assert_eq!(f.effective_engine().seed, 7);
        assert!(ScenarioFile::parse("[scenario]\nbogus = 1\n").is_err());
        assert!(ScenarioFile::parse("[scenario]\nmin_turns = 9\n").is_err());
        assert!(ScenarioFile::parse("[engine]\nk = 2\n").is_err());
    }
}
