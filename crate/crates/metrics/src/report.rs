//! Full comparison over a record set and its CSV tables.

use std::path::{Path, PathBuf};

use echo_core::RngSeed;
use serde::Serialize;

use crate::accuracy::{agreement_partition, author_accuracy, Partition};
use crate::agreement::{source_agreement, KappaMethod};
use crate::consistency::{
    consistency_experiment, ConsistencyConfig, ConsistencyReport, HeuristicPredictor, LabelSource, Predictor,
};
use crate::cost::{cost_analysis, CostInput, CostRow};
use crate::divergence::kl_to_author;
use crate::error::{MetricsError, Result};
use crate::records::{source_ids, AnnotationRecord};
use crate::vote::AgreementShape;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceReport {
    pub source_id: String,
    pub author_accuracy: f64,
    pub kappa: f64,
    pub kl_to_author: f64,
    pub partition: Partition,
}

pub fn source_report(
    records: &[AnnotationRecord],
    source: &str,
    kappa: KappaMethod,
    seed: RngSeed,
) -> Result<SourceReport> {
    Ok(SourceReport {
        source_id: source.to_string(),
        author_accuracy: author_accuracy(records, source, seed)?,
        kappa: source_agreement(records, source, kappa)?,
        kl_to_author: kl_to_author(records, source, seed)?,
        partition: agreement_partition(records, source, seed)?,
    })
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub kappa: KappaMethod,
    pub seed: RngSeed,
    pub consistency: ConsistencyConfig,
    pub costs: Vec<CostInput>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            kappa: KappaMethod::PairwiseCohen,
            seed: RngSeed(0),
            consistency: ConsistencyConfig::default(),
            costs: crate::cost::reference_inputs(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub kappa_method: KappaMethod,
    pub sources: Vec<SourceReport>,
    /// Author labels first, then each annotator source, then random labels.
    pub consistency: Vec<ConsistencyReport>,
    pub costs: Vec<CostRow>,
}

/// Runs every comparison. A source named "random" in the records is treated
/// like any other annotator source; the synthetic random label source is
/// always added to the consistency table.
pub fn analyze(records: &[AnnotationRecord], opts: &AnalysisOptions, predictor: &dyn Predictor) -> Result<Analysis> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let ids = source_ids(records);
    let sources = ids
        .iter()
        .map(|s| source_report(records, s, opts.kappa, opts.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut label_sources = vec![LabelSource::Author];
    label_sources.extend(ids.iter().cloned().map(LabelSource::Annotators));
    label_sources.push(LabelSource::Random);
    let consistency = label_sources
        .iter()
        .map(|src| consistency_experiment(records, src, predictor, &opts.consistency))
        .collect::<Result<Vec<_>>>()?;
    Ok(Analysis {
        kappa_method: opts.kappa,
        sources,
        consistency,
        costs: cost_analysis(&opts.costs)?,
    })
}

pub fn analyze_default(records: &[AnnotationRecord], opts: &AnalysisOptions) -> Result<Analysis> {
    analyze(records, opts, &HeuristicPredictor::default())
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_default()
}

impl Analysis {
    /// `source,author_accuracy,kappa,kl_divergence`
    pub fn agreement_table(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source", "author_accuracy", "kappa", "kl_divergence"])?;
        for s in &self.sources {
            w.write_record([
                s.source_id.clone(),
                format!("{:.4}", s.author_accuracy),
                format!("{:.4}", s.kappa),
                format!("{:.4}", s.kl_to_author),
            ])?;
        }
        finish(w)
    }

    /// Accuracy and count per agreement cell.
    pub fn partition_table(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let shapes = [AgreementShape::Three, AgreementShape::Two, AgreementShape::None];
        let mut header = vec!["source".to_string()];
        for s in shapes {
            header.push(format!("{}_accuracy", s.as_str()));
            header.push(format!("{}_n", s.as_str()));
        }
        header.push("excluded".into());
        w.write_record(&header)?;
        for s in &self.sources {
            let mut row = vec![s.source_id.clone()];
            for shape in shapes {
                let c = s.partition.cell(shape);
                row.push(opt(c.accuracy(), 4));
                row.push(c.n.to_string());
            }
            row.push(s.partition.excluded.to_string());
            w.write_record(&row)?;
        }
        finish(w)
    }

    /// Mean and std of predictor accuracy per label source.
    pub fn consistency_table(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label_source", "predictor", "mean", "std", "runs", "evaluated", "skipped"])?;
        for c in &self.consistency {
            w.write_record([
                c.label_source.clone(),
                c.predictor.clone(),
                format!("{:.4}", c.mean),
                format!("{:.4}", c.std),
                c.run_accuracies.len().to_string(),
                c.evaluated.to_string(),
                c.skipped.to_string(),
            ])?;
        }
        finish(w)
    }

    /// Long format: one row per (label source, in-conversation count).
    pub fn in_conversation_table(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label_source", "in_conversation", "n", "accuracy"])?;
        for c in &self.consistency {
            for (k, b) in c.by_in_conversation.iter().enumerate() {
                w.write_record([c.label_source.clone(), k.to_string(), b.n.to_string(), opt(b.accuracy(), 4)])?;
            }
        }
        finish(w)
    }

    pub fn cost_table(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "cost_per_datum", "seconds_per_datum", "hourly_rate"])?;
        for c in &self.costs {
            w.write_record([
                c.method.clone(),
                format!("{:.4}", c.cost_per_datum),
                format!("{:.1}", c.seconds_per_datum),
                format!("{:.2}", c.hourly_rate),
            ])?;
        }
        finish(w)
    }

    /// Writes all tables into `dir` and returns the paths written.
    pub fn write_reports(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let tables = [
            ("agreement.csv", self.agreement_table()?),
            ("agreement_partition.csv", self.partition_table()?),
            ("consistency.csv", self.consistency_table()?),
            ("in_conversation.csv", self.in_conversation_table()?),
            ("cost.csv", self.cost_table()?),
        ];
        let mut out = Vec::new();
        for (name, body) in tables {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            out.push(p);
        }
        Ok(out)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| MetricsError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
