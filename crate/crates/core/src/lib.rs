//! Author-labeling online learning engine.
//!
//! Messages pass a taskability filter, per-feature models predict a candidate
//! pool, a selector ranks it, and the top features drive both a four-question
//! author survey and a product recommendation. Author answers train the
//! queried feature model and its uncertainty; clicks train the selector's
//! relevance weights only.

pub mod engine;
pub mod error;
pub mod events;
pub mod features;
pub mod filter;
pub mod recommend;
pub mod rng;
pub mod scalar;
pub mod selector;
pub mod snapshot;
pub mod tasks;
pub mod text;
pub mod types;

pub use error::{EchoError, Result};
pub use rng::RngSeed;
pub use scalar::Scalar;

pub type Engine64 = engine::Engine<f64>;
pub type Engine32 = engine::Engine<f32>;
pub type FeatureModel64 = features::FeatureModel<f64>;
pub type FeatureModel32 = features::FeatureModel<f32>;
pub type FeatureEnsemble64 = features::FeatureEnsemble<f64>;
pub type Selector64 = selector::SelectorParams<f64>;
pub type Selector32 = selector::SelectorParams<f32>;
pub type Catalog64 = recommend::Catalog<f64>;
pub type Catalog32 = recommend::Catalog<f32>;
pub type FeatureValue64 = types::FeatureValue<f64>;
pub type SparseVec64 = text::SparseVec<f64>;
/// Exact click-through ratio.
pub type CtrRatio = num_rational::Ratio<u64>;
