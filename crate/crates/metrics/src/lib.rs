//! Annotation comparison suite.
//!
//! Scores third-party label sources against author labels (accuracy, kappa,
//! KL divergence, agreement-conditioned accuracy), runs the internal
//! consistency experiment with a pluggable predictor, and tabulates cost and
//! time per datum.

pub mod accuracy;
pub mod agreement;
pub mod consistency;
pub mod cost;
pub mod divergence;
pub mod error;
pub mod records;
pub mod report;
pub mod vote;

pub use accuracy::{agreement_partition, author_accuracy};
pub use agreement::{cohen_kappa, fleiss_kappa_counts, source_agreement, KappaMethod};
pub use consistency::{consistency_experiment, HeuristicPredictor, LabelSource, Predictor, RandomPredictor};
pub use cost::{cost_analysis, CostInput, Payment};
pub use divergence::{kl_divergence, kl_to_author};
pub use error::{MetricsError, Result};
pub use records::AnnotationRecord;
pub use report::{analyze, Analysis, AnalysisOptions};
