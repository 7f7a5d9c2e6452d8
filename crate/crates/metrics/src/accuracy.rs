//! Alignment of third-party labels with the author's own answer.

use std::collections::BTreeMap;

use echo_core::RngSeed;
use serde::Serialize;

use crate::error::{MetricsError, Result};
use crate::records::AnnotationRecord;
use crate::vote::{majority, AgreementShape};

/// Fraction of records whose majority label from `source` equals the author
/// label.
pub fn author_accuracy(records: &[AnnotationRecord], source: &str, seed: RngSeed) -> Result<f64> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut hits = 0usize;
    for r in records {
        if majority(r.labels(source)?, seed, source, r.id()) == r.author_label {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Cell {
    pub n: usize,
    pub hits: usize,
}

impl Cell {
    pub fn accuracy(&self) -> Option<f64> {
        (self.n > 0).then(|| self.hits as f64 / self.n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub cells: BTreeMap<AgreementShape, Cell>,
    /// Records without exactly three annotations from the source.
    pub excluded: usize,
}

impl Partition {
    pub fn cell(&self, shape: AgreementShape) -> Cell {
        self.cells.get(&shape).copied().unwrap_or_default()
    }

    pub fn total(&self) -> usize {
        self.cells.values().map(|c| c.n).sum()
    }

    /// Count-weighted accuracy over all cells.
    pub fn pooled_accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.cells.values().map(|c| c.hits).sum::<usize>() as f64 / n as f64)
    }
}

/// Accuracy split by how many of the three annotators agreed.
pub fn agreement_partition(records: &[AnnotationRecord], source: &str, seed: RngSeed) -> Result<Partition> {
    let mut cells: BTreeMap<AgreementShape, Cell> = [AgreementShape::Three, AgreementShape::Two, AgreementShape::None]
        .into_iter()
        .map(|s| (s, Cell::default()))
        .collect();
    let mut excluded = 0;
    for r in records {
        let labels = r.labels(source)?;
        let Some(shape) = AgreementShape::of(labels) else {
            excluded += 1;
            continue;
        };
        let cell = cells.get_mut(&shape).unwrap();
        cell.n += 1;
        if majority(labels, seed, source, r.id()) == r.author_label {
            cell.hits += 1;
        }
    }
    Ok(Partition { cells, excluded })
}
