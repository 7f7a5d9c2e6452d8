//! Simulator for end-to-end runs: a synthetic world of features and
//! products, authors with latent values, and the session loop that drives
//! the engine.

pub mod annotation;
pub mod author;
pub mod error;
pub mod message;
pub mod run;
pub mod scenario;
pub mod world;

pub use error::{Result, SimError};
pub use run::{run_experiment, Experiment, Summary};
pub use scenario::{ScenarioFile, SimScenario};
pub use world::World;
